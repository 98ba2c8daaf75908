//! Dense q-way arrays and q-adic (canonical polyadic) decompositions.
//!
//! Storage is row-major: the **last** axis varies fastest. The Khatri–Rao
//! product uses the same convention (the first vector's index varies
//! slowest), so that merging a group of axes with [`MultiwayArray::merge_axes`]
//! maps the outer product `a ⊗ b` onto `a ⊙ b`. `compose`, `unfold_to_three`
//! and `slice` all share this ordering.
//!
//! Axis and slice indices are 0-based throughout the library API.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Dense real array with `q >= 1` axes of lengths `dims`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawArray", into = "RawArray")]
pub struct MultiwayArray {
    dims: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArray {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl TryFrom<RawArray> for MultiwayArray {
    type Error = Error;
    fn try_from(raw: RawArray) -> Result<Self> {
        MultiwayArray::new(raw.dims, raw.values)
    }
}

impl From<MultiwayArray> for RawArray {
    fn from(a: MultiwayArray) -> Self {
        RawArray {
            dims: a.dims,
            values: a.values,
        }
    }
}

impl MultiwayArray {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidArgument("an array needs at least one axis".into()));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("zero-length axis in {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "dims {dims:?} need {n} values, got {}",
                values.len()
            )));
        }
        Ok(MultiwayArray { dims, values })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![0.0; n])
    }

    /// Outer product `v₁ ⊗ … ⊗ v_q`.
    pub fn outer(vectors: &[DVector<f64>]) -> Result<Self> {
        let dims = vectors.iter().map(|v| v.len()).collect();
        Self::new(dims, khatri_rao(vectors).data.into())
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(vec![m.nrows(), m.ncols()], linalg::to_rows(m).concat())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn strides(&self) -> Vec<usize> {
        strides(&self.dims)
    }

    /// Flat position of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.order() {
            return Err(Error::DimensionMismatch(format!(
                "index of length {} for an array of order {}",
                index.len(),
                self.order()
            )));
        }
        let mut off = 0;
        for ((&i, &d), s) in index.iter().zip(&self.dims).zip(self.strides()) {
            if i >= d {
                return Err(Error::OutOfRange { index: i, len: d });
            }
            off += i * s;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.values[self.offset(index)?])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        linalg::pairwise_sum(&self.values)
    }

    pub fn scaled(&self, c: f64) -> Self {
        MultiwayArray {
            dims: self.dims.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// `‖self − other‖_F`.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// View of a two-way array as a matrix.
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.order() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "expected a two-way array, got order {}",
                self.order()
            )));
        }
        Ok(DMatrix::from_row_slice(self.dims[0], self.dims[1], &self.values))
    }

    /// Merge groups of axes into single axes. `groups` must partition
    /// `0..q`; output axis `g` enumerates the Khatri–Rao index of the axes in
    /// `groups[g]`, first listed axis slowest.
    pub fn merge_axes(&self, groups: &[Vec<usize>]) -> Result<Self> {
        let q = self.order();
        let mut seen = vec![false; q];
        for g in groups {
            if g.is_empty() {
                return Err(Error::InvalidPartition("empty axis group".into()));
            }
            for &a in g {
                if a >= q {
                    return Err(Error::OutOfRange { index: a, len: q });
                }
                if seen[a] {
                    return Err(Error::InvalidPartition(format!("axis {a} appears twice")));
                }
                seen[a] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidPartition("groups do not cover every axis".into()));
        }
        let out_dims: Vec<usize> = groups
            .iter()
            .map(|g| g.iter().map(|&a| self.dims[a]).product())
            .collect();
        // within-group stride of each input axis, and its output axis
        let mut group_of = vec![0; q];
        let mut inner_stride = vec![0; q];
        for (gi, g) in groups.iter().enumerate() {
            let mut s = 1;
            for &a in g.iter().rev() {
                group_of[a] = gi;
                inner_stride[a] = s;
                s *= self.dims[a];
            }
        }
        let out_strides = strides(&out_dims);
        let mut out = vec![0.0; self.len()];
        let mut idx = vec![0usize; q];
        for &v in &self.values {
            let mut off = 0;
            for a in 0..q {
                off += idx[a] * inner_stride[a] * out_strides[group_of[a]];
            }
            out[off] = v;
            increment(&mut idx, &self.dims);
        }
        Self::new(out_dims, out)
    }

    /// Sum out every axis not in `keep`; remaining axes stay in ascending order.
    pub fn marginal(&self, keep: &[usize]) -> Result<Self> {
        let keep = normalize_keep(keep, self.order())?;
        let out_dims: Vec<usize> = keep.iter().map(|&a| self.dims[a]).collect();
        let out_strides = strides(&out_dims);
        let mut out = vec![0.0; out_dims.iter().product()];
        let mut idx = vec![0usize; self.order()];
        for &v in &self.values {
            let off: usize = keep.iter().zip(&out_strides).map(|(&a, s)| idx[a] * s).sum();
            out[off] += v;
            increment(&mut idx, &self.dims);
        }
        Self::new(out_dims, out)
    }

    /// Matrix `x(:, :, k)` of a three-way array.
    pub fn slice(&self, k: usize) -> Result<DMatrix<f64>> {
        if self.order() != 3 {
            return Err(Error::DimensionMismatch(format!(
                "slice needs a three-way array, got order {}",
                self.order()
            )));
        }
        let (k1, k2, k3) = (self.dims[0], self.dims[1], self.dims[2]);
        if k >= k3 {
            return Err(Error::OutOfRange { index: k, len: k3 });
        }
        Ok(DMatrix::from_fn(k1, k2, |a, b| self.values[(a * k2 + b) * k3 + k]))
    }

    /// CSV rendering of a two-way array, one matrix row per line.
    pub fn to_csv(&self) -> Result<String> {
        let m = self.to_matrix()?;
        Ok(matrix_to_csv(&m))
    }
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn matrix_from_csv(text: &str) -> Result<DMatrix<f64>> {
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidArgument(format!("bad number {t:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    linalg::from_rows(&rows)
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for a in (0..dims.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * dims[a + 1];
    }
    s
}

/// Advance a row-major multi-index.
fn increment(idx: &mut [usize], dims: &[usize]) {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] < dims[a] {
            return;
        }
        idx[a] = 0;
    }
}

fn normalize_keep(keep: &[usize], q: usize) -> Result<Vec<usize>> {
    if keep.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut k = keep.to_vec();
    k.sort_unstable();
    k.dedup();
    if let Some(&bad) = k.iter().find(|&&a| a >= q) {
        return Err(Error::OutOfRange { index: bad, len: q });
    }
    Ok(k)
}

/// Khatri–Rao product of vectors: all interaction products, first vector's
/// index slowest. For two vectors, entry `i·len(b) + j` is `a[i]·b[j]`.
pub fn khatri_rao(vectors: &[DVector<f64>]) -> DVector<f64> {
    let mut out = vec![1.0];
    for v in vectors {
        let mut next = Vec::with_capacity(out.len() * v.len());
        for &a in &out {
            next.extend(v.iter().map(|&b| a * b));
        }
        out = next;
    }
    DVector::from_vec(out)
}

/// Column-wise Khatri–Rao product of matrices with equal column counts.
pub fn khatri_rao_columns(mats: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let r = mats
        .first()
        .map(|m| m.ncols())
        .ok_or_else(|| Error::InvalidArgument("no matrices".into()))?;
    if mats.iter().any(|m| m.ncols() != r) {
        return Err(Error::DimensionMismatch("column counts differ".into()));
    }
    let rows: usize = mats.iter().map(|m| m.nrows()).product();
    let mut out = DMatrix::zeros(rows, r);
    for j in 0..r {
        let cols: Vec<DVector<f64>> = mats.iter().map(|m| m.column(j).into_owned()).collect();
        out.set_column(j, &khatri_rao(&cols));
    }
    Ok(out)
}

/// Validate a pivot/partition triple and return the partition sorted.
pub fn check_partition(q: usize, pivot: usize, q1: &[usize], q2: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    if q < 3 {
        return Err(Error::InvalidPartition(format!("unfolding needs q >= 3, got {q}")));
    }
    if pivot >= q {
        return Err(Error::OutOfRange { index: pivot, len: q });
    }
    if q1.is_empty() || q2.is_empty() {
        return Err(Error::InvalidPartition("both groups must be nonempty".into()));
    }
    let mut all: Vec<usize> = q1.iter().chain(q2).copied().collect();
    all.sort_unstable();
    let expected: Vec<usize> = (0..q).filter(|&a| a != pivot).collect();
    if all != expected {
        return Err(Error::InvalidPartition(format!(
            "{q1:?} and {q2:?} do not partition the axes other than {pivot}"
        )));
    }
    let mut a = q1.to_vec();
    let mut b = q2.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok((a, b))
}

/// Unfold toward `pivot`: the result has axes `(⊙Q₁, pivot, ⊙Q₂)`.
pub fn unfold_to_three(x: &MultiwayArray, pivot: usize, q1: &[usize], q2: &[usize]) -> Result<MultiwayArray> {
    let (a, b) = check_partition(x.order(), pivot, q1, q2)?;
    x.merge_axes(&[a, vec![pivot], b])
}

/// Split the axes other than `pivot` into two groups whose dimension
/// products are as balanced as possible. Ties go to the lexicographically
/// smallest first group containing the lowest remaining axis.
pub fn balanced_partition(dims: &[usize], pivot: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let q = dims.len();
    if q < 3 {
        return Err(Error::InvalidPartition(format!("unfolding needs q >= 3, got {q}")));
    }
    if pivot >= q {
        return Err(Error::OutOfRange { index: pivot, len: q });
    }
    let others: Vec<usize> = (0..q).filter(|&a| a != pivot).collect();
    let m = others.len();
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    // the first remaining axis always goes into the first group
    for mask in 0u32..(1 << (m - 1)) {
        let mut g1 = vec![others[0]];
        let mut g2 = Vec::new();
        for (bit, &a) in others[1..].iter().enumerate() {
            if mask & (1 << bit) != 0 {
                g1.push(a);
            } else {
                g2.push(a);
            }
        }
        if g2.is_empty() {
            continue;
        }
        let p1: f64 = g1.iter().map(|&a| dims[a] as f64).product();
        let p2: f64 = g2.iter().map(|&a| dims[a] as f64).product();
        let imbalance = (p1.ln() - p2.ln()).abs();
        let better = match &best {
            None => true,
            Some((b, bg1, _)) => imbalance < *b - 1e-12 || ((imbalance - *b).abs() <= 1e-12 && g1 < *bg1),
        };
        if better {
            best = Some((imbalance, g1, g2));
        }
    }
    let (_, g1, g2) = best.expect("q >= 3 leaves at least one split");
    Ok((g1, g2))
}

/// Factor matrices `X₁ … X_q` (each `κᵢ × r`) and nonzero weights `π`.
#[derive(Clone, Debug, PartialEq)]
pub struct QadDecomposition {
    factors: Vec<DMatrix<f64>>,
    weights: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDecomposition {
    factors: Vec<Vec<Vec<f64>>>,
    weights: Vec<f64>,
}

impl Serialize for QadDecomposition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RawDecomposition {
            factors: self.factors.iter().map(linalg::to_rows).collect(),
            weights: self.weights.iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for QadDecomposition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawDecomposition::deserialize(d)?;
        let factors = raw
            .factors
            .iter()
            .map(|f| linalg::from_rows(f))
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        QadDecomposition::new(factors, DVector::from_vec(raw.weights)).map_err(serde::de::Error::custom)
    }
}

impl QadDecomposition {
    pub fn new(factors: Vec<DMatrix<f64>>, weights: DVector<f64>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidArgument("a decomposition needs at least one factor".into()));
        }
        let r = weights.len();
        if r == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        for (i, f) in factors.iter().enumerate() {
            if f.ncols() != r {
                return Err(Error::DimensionMismatch(format!(
                    "factor {i} has {} columns, weights have {r}",
                    f.ncols()
                )));
            }
            if f.nrows() == 0 {
                return Err(Error::DimensionMismatch(format!("factor {i} has no rows")));
            }
        }
        if weights.iter().any(|&w| w == 0.0) {
            return Err(Error::InvalidArgument("weights must be nonzero".into()));
        }
        Ok(QadDecomposition { factors, weights })
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    /// `Σⱼ πⱼ x₁ⱼ ⊗ … ⊗ x_qⱼ`.
    pub fn compose(&self) -> MultiwayArray {
        let dims = self.dims();
        let mut values = vec![0.0; dims.iter().product()];
        for j in 0..self.rank() {
            let cols: Vec<DVector<f64>> = self.factors.iter().map(|f| f.column(j).into_owned()).collect();
            let kr = khatri_rao(&cols);
            let w = self.weights[j];
            for (v, t) in values.iter_mut().zip(kr.iter()) {
                *v += w * t;
            }
        }
        MultiwayArray::new(dims, values).expect("factor shapes were validated")
    }

    /// `Σⱼ πⱼ ⊗_{i∈keep} xᵢⱼ`, axes in ascending order.
    pub fn submodel(&self, keep: &[usize]) -> Result<MultiwayArray> {
        let keep = normalize_keep(keep, self.order())?;
        let factors = keep.iter().map(|&a| self.factors[a].clone()).collect();
        Ok(QadDecomposition::new(factors, self.weights.clone())?.compose())
    }

    /// Reorder components: component `j` of the result is component `sigma[j]`.
    pub fn permuted(&self, sigma: &[usize]) -> Result<Self> {
        let mut check = sigma.to_vec();
        check.sort_unstable();
        if check != (0..self.rank()).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument(format!("{sigma:?} is not a permutation")));
        }
        Ok(QadDecomposition {
            factors: self.factors.iter().map(|f| linalg::permute_columns(f, sigma)).collect(),
            weights: DVector::from_iterator(sigma.len(), sigma.iter().map(|&k| self.weights[k])),
        })
    }

    /// Scale column `j` of factor `i` by `scales[i][j]`, dividing the weight
    /// by the product so that `compose()` is unchanged.
    pub fn rescaled(&self, scales: &[Vec<f64>]) -> Result<Self> {
        if scales.len() != self.order() || scales.iter().any(|s| s.len() != self.rank()) {
            return Err(Error::DimensionMismatch("scale table shape".into()));
        }
        let mut factors = self.factors.clone();
        let mut weights = self.weights.clone();
        for (f, s) in factors.iter_mut().zip(scales) {
            for (j, &c) in s.iter().enumerate() {
                if c == 0.0 {
                    return Err(Error::InvalidArgument("zero scale".into()));
                }
                f.column_mut(j).scale_mut(c);
                weights[j] /= c;
            }
        }
        Ok(QadDecomposition { factors, weights })
    }
}

/// Source of lower-dimensional submodels `Σⱼ πⱼ ⊗_{i∈𝒬} xᵢⱼ`.
pub trait SubmodelProvider {
    fn order(&self) -> usize;
    /// Submodel over the axes in `keep` (returned in ascending axis order).
    fn submodel(&self, keep: &[usize]) -> Result<MultiwayArray>;
}

impl SubmodelProvider for QadDecomposition {
    fn order(&self) -> usize {
        self.factors.len()
    }
    fn submodel(&self, keep: &[usize]) -> Result<MultiwayArray> {
        QadDecomposition::submodel(self, keep)
    }
}

/// Contingency-table interpretation of an array: submodels are marginal
/// tables obtained by summing out the dropped variables.
#[derive(Clone, Copy, Debug)]
pub struct ContingencyTable<'a>(pub &'a MultiwayArray);

impl SubmodelProvider for ContingencyTable<'_> {
    fn order(&self) -> usize {
        self.0.order()
    }
    fn submodel(&self, keep: &[usize]) -> Result<MultiwayArray> {
        self.0.marginal(keep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(i: usize, n: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        v
    }

    fn random_decomposition(seed: u64, dims: &[usize], r: usize) -> QadDecomposition {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors = dims
            .iter()
            .map(|&k| DMatrix::from_fn(k, r, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let weights = DVector::from_fn(r, |_, _| rng.random_range(0.5..1.5));
        QadDecomposition::new(factors, weights).unwrap()
    }

    #[test]
    fn compose_single_indicator() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let dec = QadDecomposition::new(vec![x.clone(), x.clone(), x], DVector::from_element(1, 1.0)).unwrap();
        let a = dec.compose();
        assert_eq!(a.dims(), &[2, 2, 2]);
        assert_eq!(a.get(&[0, 0, 0]).unwrap(), 1.0);
        assert_eq!(a.sum(), 1.0);
    }

    #[test]
    fn compose_orthogonal_diagonal() {
        let i2 = DMatrix::identity(2, 2);
        let dec = QadDecomposition::new(vec![i2.clone(), i2.clone(), i2], DVector::from_element(2, 1.0)).unwrap();
        let a = dec.compose();
        assert_eq!(a.get(&[0, 0, 0]).unwrap(), 1.0);
        assert_eq!(a.get(&[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(a.sum(), 2.0);
    }

    #[test]
    fn compose_matches_triple_loop() {
        let dec = random_decomposition(7, &[4, 4, 4], 3);
        let a = dec.compose();
        let f = dec.factors();
        for k1 in 0..4 {
            for k2 in 0..4 {
                for k3 in 0..4 {
                    let mut s = 0.0;
                    for j in 0..3 {
                        s += dec.weights()[j] * f[0][(k1, j)] * f[1][(k2, j)] * f[2][(k3, j)];
                    }
                    assert!((a.get(&[k1, k2, k3]).unwrap() - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn compose_rejects_mismatched_factors() {
        let f = vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 3)];
        assert!(matches!(
            QadDecomposition::new(f, DVector::from_element(2, 1.0)),
            Err(Error::DimensionMismatch(_))
        ));
        let f = vec![DMatrix::zeros(2, 1)];
        assert!(QadDecomposition::new(f, DVector::from_element(1, 0.0)).is_err());
    }

    #[test]
    fn submodel_examples() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let dec = QadDecomposition::new(vec![x.clone(), x.clone(), x], DVector::from_element(1, 1.0)).unwrap();
        let m = dec.submodel(&[0, 1]).unwrap().to_matrix().unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));

        let dec = random_decomposition(11, &[4, 4, 4], 3);
        let one = dec.submodel(&[1]).unwrap();
        let xp = &dec.factors()[1] * dec.weights();
        assert!(one.values().iter().zip(xp.iter()).all(|(a, b)| (a - b).abs() < 1e-14));

        let m13 = dec.submodel(&[0, 2]).unwrap().to_matrix().unwrap();
        let f = dec.factors();
        for a in 0..4 {
            for b in 0..4 {
                let s: f64 = (0..3).map(|j| dec.weights()[j] * f[0][(a, j)] * f[2][(b, j)]).sum();
                assert!((m13[(a, b)] - s).abs() < 1e-12);
            }
        }
        assert!(matches!(dec.submodel(&[]), Err(Error::EmptySet)));
        assert!(matches!(dec.submodel(&[3]), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn khatri_rao_ordering() {
        let a = DVector::from_vec(vec![1.0, 0.0]);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        assert_eq!(khatri_rao(&[a, b]).as_slice(), &[0.0, 1.0, 0.0, 0.0]);
        let a = DVector::from_vec(vec![2.0, 3.0]);
        let b = DVector::from_vec(vec![5.0, 7.0]);
        assert_eq!(khatri_rao(&[a, b]).as_slice(), &[10.0, 14.0, 15.0, 21.0]);
    }

    #[test]
    fn khatri_rao_norm_is_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let kr = khatri_rao(&[a.clone(), b.clone()]);
        assert!((kr.norm() - a.norm() * b.norm()).abs() < 1e-14);
    }

    #[test]
    fn unfold_q3_is_axis_permutation() {
        let dec = random_decomposition(5, &[2, 3, 4], 2);
        let x = dec.compose();
        let u = unfold_to_three(&x, 2, &[0], &[1]).unwrap();
        assert_eq!(u.dims(), &[2, 4, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(u.get(&[a, c, b]).unwrap(), x.get(&[a, b, c]).unwrap());
                }
            }
        }
    }

    #[test]
    fn unfold_q4_indicator() {
        let dec = QadDecomposition::new(
            vec![
                DMatrix::from_column_slice(2, 1, e(1, 2).as_slice()),
                DMatrix::from_column_slice(3, 1, e(2, 3).as_slice()),
                DMatrix::from_column_slice(2, 1, e(0, 2).as_slice()),
                DMatrix::from_column_slice(2, 1, e(1, 2).as_slice()),
            ],
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let x = dec.compose();
        let u = unfold_to_three(&x, 3, &[0, 1], &[2]).unwrap();
        assert_eq!(u.dims(), &[6, 2, 2]);
        // (1, 2) merges to 1·3 + 2 = 5
        assert_eq!(u.get(&[5, 1, 0]).unwrap(), 1.0);
        assert_eq!(u.sum(), 1.0);
    }

    #[test]
    fn unfold_matches_khatri_rao_composition() {
        let dec = random_decomposition(9, &[3, 2, 4, 3], 2);
        let x = dec.compose();
        let u = unfold_to_three(&x, 1, &[0, 3], &[2]).unwrap();
        let f = dec.factors();
        let merged = QadDecomposition::new(
            vec![
                khatri_rao_columns(&[&f[0], &f[3]]).unwrap(),
                f[1].clone(),
                f[2].clone(),
            ],
            dec.weights().clone(),
        )
        .unwrap()
        .compose();
        assert!(u.distance(&merged).unwrap() < 1e-12);
        assert!((u.frobenius_norm() - x.frobenius_norm()).abs() < 1e-12);
    }

    #[test]
    fn unfold_rejects_bad_partitions() {
        let x = MultiwayArray::zeros(vec![2, 2, 2, 2]).unwrap();
        assert!(unfold_to_three(&x, 0, &[1], &[2]).is_err());
        assert!(unfold_to_three(&x, 0, &[1, 2, 3], &[]).is_err());
        assert!(unfold_to_three(&x, 0, &[0, 1], &[2, 3]).is_err());
        let y = MultiwayArray::zeros(vec![2, 2]).unwrap();
        assert!(unfold_to_three(&y, 0, &[1], &[]).is_err());
    }

    #[test]
    fn slice_examples() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let dec = QadDecomposition::new(vec![x.clone(), x.clone(), x], DVector::from_element(1, 1.0)).unwrap();
        let a = dec.compose();
        assert_eq!(a.slice(0).unwrap(), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(a.slice(1).unwrap(), DMatrix::zeros(2, 2));
        assert!(matches!(a.slice(2), Err(Error::OutOfRange { .. })));

        let dec = random_decomposition(13, &[3, 4, 5], 3);
        let a = dec.compose();
        let f = dec.factors();
        for k in 0..5 {
            let d = DMatrix::from_diagonal(&DVector::from_fn(3, |j, _| dec.weights()[j] * f[2][(k, j)]));
            let expect = &f[0] * d * f[1].transpose();
            assert!((a.slice(k).unwrap() - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn balanced_partition_splits_evenly() {
        let (a, b) = balanced_partition(&[4, 4, 4, 4, 4], 2).unwrap();
        assert_eq!((a.len(), b.len()), (2, 2));
        let (a, b) = balanced_partition(&[3, 3, 3], 1).unwrap();
        assert_eq!((a, b), (vec![0], vec![2]));
        let (a, b) = balanced_partition(&[8, 2, 2, 2], 3).unwrap();
        assert_eq!((a, b), (vec![0], vec![1, 2]));
    }

    #[test]
    fn marginal_of_population_table_is_submodel() {
        let mut dec = random_decomposition(21, &[3, 4, 2], 2);
        // probability columns and weights make marginals coincide with submodels
        let factors = dec
            .factors()
            .iter()
            .map(|f| {
                let g = f.map(|v| v.abs() + 0.1);
                let sums = g.row_sum();
                DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)] / sums[j])
            })
            .collect();
        dec = QadDecomposition::new(factors, DVector::from_vec(vec![0.3, 0.7])).unwrap();
        let table = dec.compose();
        let provider = ContingencyTable(&table);
        for keep in [vec![0], vec![1, 2], vec![0, 2]] {
            let a = provider.submodel(&keep).unwrap();
            let b = dec.submodel(&keep).unwrap();
            assert!(a.distance(&b).unwrap() < 1e-14);
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let a = MultiwayArray::new(vec![2, 1], vec![1.5, -2.0]).unwrap();
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, r#"{"dims":[2,1],"values":[1.5,-2.0]}"#);
        let b: MultiwayArray = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
        assert!(serde_json::from_str::<MultiwayArray>(r#"{"dims":[2,2],"values":[1.0]}"#).is_err());
        assert!(serde_json::from_str::<MultiwayArray>(r#"{"dims":[1],"values":[1.0],"x":1}"#).is_err());
    }

    #[test]
    fn csv_for_two_way_arrays() {
        let a = MultiwayArray::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let csv = a.to_csv().unwrap();
        assert_eq!(matrix_from_csv(&csv).unwrap(), a.to_matrix().unwrap());
        assert!(MultiwayArray::zeros(vec![2, 2, 2]).unwrap().to_csv().is_err());
    }
}
