//! Constructive recovery of a q-ad from the array and its submodels.
//!
//! For a pivot axis `p` and a split of the remaining axes into `Q₁`, `Q₂`,
//! the two-way submodel `A₀` over `Q₁ ∪ Q₂` is whitened, the slices
//! `Aₖ = X(:, :, k)` along the pivot are mapped to `Cₖ = W₁AₖW₂'`, and the
//! joint diagonalizer of the `Cₖ` yields the pivot factor as its
//! eigenvalues. Running every axis as pivot and matching the labels gives
//! all factors on one common component ordering.
//!
//! ```
//! use nalgebra::{DMatrix, DVector};
//! use triad::decompose::{recover_all_factors, DecomposeOptions};
//! use triad::multiway::QadDecomposition;
//!
//! let x1 = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 1.0, 0.0, 2.0]);
//! let x2 = DMatrix::from_row_slice(3, 2, &[2.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
//! let x3 = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 0.0, 3.0, 1.0, 0.0]);
//! let truth = QadDecomposition::new(vec![x1, x2, x3], DVector::from_vec(vec![0.4, 0.6])).unwrap();
//!
//! let report = recover_all_factors(&truth.compose(), &truth, 2, &DecomposeOptions::default()).unwrap();
//! assert!(report.residual < 1e-10);
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jointdiag::{self, JointDiagOptions, JointDiagProblem, JointDiagResult};
use crate::linalg::{self, checked_inverse};
use crate::multiway::{self, MultiwayArray, QadDecomposition, SubmodelProvider};

/// Whitening transforms built from the top-`r` singular triplets of `A₀`.
#[derive(Clone, Debug)]
pub struct WhiteningPair {
    /// `S^{-1/2} U'`, `r × κ₁`.
    pub w1: DMatrix<f64>,
    /// `S^{-1/2} V'`, `r × κ₂`.
    pub w2: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    /// `σ_r − σ_{r+1}` (with `σ_{r+1} = 0` when `A₀` has only `r` values).
    pub rank_gap: f64,
}

impl WhiteningPair {
    /// `U S^{1/2} Q`, proportional to `X₁Π^{1/2}` when `Q` diagonalizes the stack.
    pub fn left_factor(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let sqrt_s = DMatrix::from_diagonal(&self.singular_values.map(f64::sqrt));
        &self.u * sqrt_s * q
    }

    /// `V S^{1/2} Q⁻ᵀ`, proportional to `X₂Π^{1/2}`.
    pub fn right_factor(&self, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let sqrt_s = DMatrix::from_diagonal(&self.singular_values.map(f64::sqrt));
        let qinv = checked_inverse(q, JointDiagOptions::default().condition_cap)?;
        Ok(&self.v * sqrt_s * qinv.transpose())
    }
}

/// Whiten `A₀` at rank `r`. Fails with [`Error::DeficientRank`] when
/// `σ_r / σ₁ < threshold`.
pub fn whiten(a0: &DMatrix<f64>, r: usize, threshold: f64) -> Result<WhiteningPair> {
    let (k1, k2) = a0.shape();
    if r == 0 {
        return Err(Error::InvalidArgument("rank must be positive".into()));
    }
    if k1 < r || k2 < r {
        return Err(Error::DeficientRank {
            ratio: 0.0,
            threshold,
        });
    }
    if a0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("submodel has non-finite entries".into()));
    }
    let dec = linalg::svd(a0)?;
    let s = dec.s.as_slice();
    let ratio = if s[0] > 0.0 { s[r - 1] / s[0] } else { 0.0 };
    if !(ratio >= threshold) {
        return Err(Error::DeficientRank { ratio, threshold });
    }
    let u = dec.u.columns(0, r).into_owned();
    let v = dec.v.columns(0, r).into_owned();
    let sv = DVector::from_iterator(r, s[..r].iter().copied());
    let inv_sqrt = DMatrix::from_diagonal(&sv.map(|x| 1.0 / x.sqrt()));
    Ok(WhiteningPair {
        w1: &inv_sqrt * u.transpose(),
        w2: &inv_sqrt * v.transpose(),
        u,
        v,
        rank_gap: s[r - 1] - s.get(r).copied().unwrap_or(0.0),
        singular_values: sv,
    })
}

/// The stack `{W₁ X(:, :, k) W₂' : k}` of a three-way array with the pivot last.
pub fn eigen_stack(x: &MultiwayArray, whitening: &WhiteningPair) -> Result<JointDiagProblem> {
    if x.order() != 3 {
        return Err(Error::DimensionMismatch(format!("expected a three-way array, got order {}", x.order())));
    }
    let d = x.dims();
    if d[0] != whitening.w1.ncols() || d[1] != whitening.w2.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "slices are {}x{}, whitening expects {}x{}",
            d[0],
            d[1],
            whitening.w1.ncols(),
            whitening.w2.ncols()
        )));
    }
    let mats = (0..d[2])
        .map(|k| Ok(&whitening.w1 * x.slice(k)? * whitening.w2.transpose()))
        .collect::<Result<Vec<_>>>()?;
    JointDiagProblem::new(mats)
}

/// Third factor of a three-way array (pivot last) given the two-way
/// submodel `A₀` over its first two axes. Row `k` is the diagonal of
/// `Q̂⁻¹ Cₖ Q̂`.
pub fn recover_third_factor(
    x: &MultiwayArray,
    a0: &DMatrix<f64>,
    r: usize,
    opts: &DecomposeOptions,
) -> Result<(DMatrix<f64>, JointDiagResult)> {
    let w = whiten(a0, r, opts.rank_threshold)?;
    let problem = eigen_stack(x, &w)?;
    let jd = solve_tolerant(&problem, &opts.jointdiag, &mut Vec::new())?;
    Ok((jd.eigenvalue_matrix(), jd))
}

fn solve_tolerant(problem: &JointDiagProblem, opts: &JointDiagOptions, warnings: &mut Vec<String>) -> Result<JointDiagResult> {
    match jointdiag::solve(problem, opts) {
        Ok(r) => Ok(r),
        Err(Error::NonConvergence { best }) => {
            warnings.push(format!(
                "joint diagonalization stopped after {} sweeps without meeting the tolerance",
                best.sweeps
            ));
            Ok(*best)
        }
        Err(e) => Err(e),
    }
}

/// Least-squares weights `π = (Xᵢ'Xᵢ)⁻¹Xᵢ' 𝕏_{i}`.
pub fn recover_weights(xi: &DMatrix<f64>, submodel: &DVector<f64>) -> Result<DVector<f64>> {
    linalg::least_squares(xi, submodel, 1e12)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleConvention {
    /// Scale fixed by the submodel provider (pivot eigenvalues as recovered).
    Identified,
    /// Unit Euclidean norm, largest-magnitude entry positive; weights refit
    /// against the full array.
    #[default]
    UnitNorm,
    /// Columns sum to one; weights absorb the scale.
    SumToOne,
}

impl std::str::FromStr for ScaleConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identified" => Ok(ScaleConvention::Identified),
            "unit-norm" => Ok(ScaleConvention::UnitNorm),
            "sum-to-one" => Ok(ScaleConvention::SumToOne),
            other => Err(Error::InvalidArgument(format!("unknown scale convention `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecomposeOptions {
    /// Smallest accepted `σ_r / σ₁` of every whitened submodel.
    pub rank_threshold: f64,
    pub jointdiag: JointDiagOptions,
    /// Largest relative reconstruction residual accepted after labeling.
    pub alignment_bound: f64,
    pub scale: ScaleConvention,
    /// Axis whose one-way submodel determines the weights.
    pub weight_axis: usize,
    /// Explicit `(Q₁, Q₂)` split for the last axis as pivot; other pivots
    /// always use the balanced split.
    pub partition: Option<(Vec<usize>, Vec<usize>)>,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        DecomposeOptions {
            rank_threshold: 1e-10,
            jointdiag: JointDiagOptions::default(),
            alignment_bound: 1.0,
            scale: ScaleConvention::default(),
            weight_axis: 0,
            partition: None,
        }
    }
}

/// Whitening and joint diagonalization for one pivot axis.
#[derive(Clone, Debug)]
pub struct PivotFit {
    pub pivot: usize,
    pub q1: Vec<usize>,
    pub q2: Vec<usize>,
    pub whitening: WhiteningPair,
    pub jd: JointDiagResult,
}

impl PivotFit {
    /// `κ_p × r` factor of the pivot axis at the provider's scale.
    pub fn pivot_factor(&self) -> DMatrix<f64> {
        self.jd.eigenvalue_matrix()
    }

    /// Reorder components by `sigma` (output `j` ← input `sigma[j]`).
    pub fn permuted(&self, sigma: &[usize]) -> PivotFit {
        PivotFit {
            jd: self.jd.permuted(sigma),
            ..self.clone()
        }
    }

    /// Column directions of every non-pivot factor, up to scale, obtained
    /// from the whitening pair and the joint diagonalizer.
    pub fn directions(&self, dims: &[usize]) -> Result<Vec<(usize, DMatrix<f64>)>> {
        let mut out = Vec::new();
        let left = self.whitening.left_factor(&self.jd.q);
        let right = self.whitening.right_factor(&self.jd.q)?;
        for (group, merged) in [(&self.q1, left), (&self.q2, right)] {
            for (axis, m) in split_khatri_rao(&merged, group, dims)? {
                out.push((axis, m));
            }
        }
        out.sort_by_key(|(a, _)| *a);
        Ok(out)
    }
}

/// Split columns of a Khatri–Rao product over `group` into per-axis
/// factors by rank-one extraction (leading singular vector of each mode).
fn split_khatri_rao(merged: &DMatrix<f64>, group: &[usize], dims: &[usize]) -> Result<Vec<(usize, DMatrix<f64>)>> {
    let r = merged.ncols();
    if group.len() == 1 {
        return Ok(vec![(group[0], merged.clone())]);
    }
    let gdims: Vec<usize> = group.iter().map(|&a| dims[a]).collect();
    let mut out: Vec<(usize, DMatrix<f64>)> = group.iter().map(|&a| (a, DMatrix::zeros(dims[a], r))).collect();
    for j in 0..r {
        let t = MultiwayArray::new(gdims.clone(), merged.column(j).iter().copied().collect())?;
        for pos in 0..group.len() {
            let rest: Vec<usize> = (0..group.len()).filter(|&b| b != pos).collect();
            let m = t.merge_axes(&[vec![pos], rest])?.to_matrix()?;
            let dec = linalg::svd(&m)?;
            out[pos].1.set_column(j, &(dec.u.column(0) * dec.s[0].sqrt()));
        }
    }
    Ok(out)
}

/// Whitening plus joint diagonalization with `pivot` as the slicing axis.
pub fn fit_pivot<P: SubmodelProvider + ?Sized>(
    x: &MultiwayArray,
    provider: &P,
    r: usize,
    pivot: usize,
    partition: Option<(Vec<usize>, Vec<usize>)>,
    opts: &DecomposeOptions,
    warnings: &mut Vec<String>,
) -> Result<PivotFit> {
    let q = x.order();
    if provider.order() != q {
        return Err(Error::DimensionMismatch(format!(
            "submodel provider has order {}, array has order {q}",
            provider.order()
        )));
    }
    let (q1, q2) = match partition {
        Some((a, b)) => multiway::check_partition(q, pivot, &a, &b)?,
        None => multiway::balanced_partition(x.dims(), pivot)?,
    };
    let others: Vec<usize> = (0..q).filter(|&a| a != pivot).collect();
    let pos = |a: usize| others.iter().position(|&b| b == a).expect("axis is in the kept set");
    let sub = provider.submodel(&others)?;
    let a0 = sub
        .merge_axes(&[q1.iter().map(|&a| pos(a)).collect(), q2.iter().map(|&a| pos(a)).collect()])?
        .to_matrix()?;
    let three = x.merge_axes(&[q1.clone(), q2.clone(), vec![pivot]])?;
    let whitening = whiten(&a0, r, opts.rank_threshold)?;
    let problem = eigen_stack(&three, &whitening)?;
    let jd = solve_tolerant(&problem, &opts.jointdiag, warnings)?;
    if jd.degenerate {
        warnings.push(format!("axis {pivot}: eigenvalue columns nearly coincide"));
    }
    Ok(PivotFit {
        pivot,
        q1,
        q2,
        whitening,
        jd,
    })
}

#[derive(Clone, Debug)]
pub struct DecomposeReport {
    pub decomposition: QadDecomposition,
    /// Joint-diagonalization criterion summed over all pivots.
    pub criterion: f64,
    /// `‖X − compose(decomposition)‖_F / ‖X‖_F`.
    pub residual: f64,
    pub rank_gaps: Vec<f64>,
    pub warnings: Vec<String>,
    /// Per-axis fits, already relabeled to the common component order.
    pub fits: Vec<PivotFit>,
}

#[derive(Serialize, Deserialize)]
struct RawReport {
    decomposition: QadDecomposition,
    criterion: f64,
    residual: f64,
    rank_gaps: Vec<f64>,
    warnings: Vec<String>,
}

impl Serialize for DecomposeReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RawReport {
            decomposition: self.decomposition.clone(),
            criterion: self.criterion,
            residual: self.residual,
            rank_gaps: self.rank_gaps.clone(),
            warnings: self.warnings.clone(),
        }
        .serialize(s)
    }
}

/// Recover every factor on a common component ordering, attach weights,
/// and report the reconstruction residual.
pub fn recover_all_factors<P: SubmodelProvider + ?Sized>(
    x: &MultiwayArray,
    provider: &P,
    r: usize,
    opts: &DecomposeOptions,
) -> Result<DecomposeReport> {
    let q = x.order();
    if q < 3 {
        return Err(Error::InvalidPartition(format!("decomposition needs q >= 3, got {q}")));
    }
    if opts.weight_axis >= q {
        return Err(Error::OutOfRange {
            index: opts.weight_axis,
            len: q,
        });
    }
    let dims = x.dims().to_vec();
    let mut warnings = Vec::new();
    let reference = q - 1;
    let ref_fit = fit_pivot(x, provider, r, reference, opts.partition.clone(), opts, &mut warnings)?;
    let directions = ref_fit.directions(&dims)?;

    let mut fits = Vec::with_capacity(q);
    for axis in 0..q {
        if axis == reference {
            fits.push(ref_fit.clone());
            continue;
        }
        let fit = fit_pivot(x, provider, r, axis, None, opts, &mut warnings)?;
        let target = &directions.iter().find(|(a, _)| *a == axis).expect("every axis has a direction").1;
        let score = linalg::abs_cosines(target, &fit.pivot_factor());
        let sigma = linalg::best_assignment(&score, 8);
        fits.push(fit.permuted(&sigma));
    }

    let factors: Vec<DMatrix<f64>> = fits.iter().map(PivotFit::pivot_factor).collect();
    let one_way = provider.submodel(&[opts.weight_axis])?;
    let weights = recover_weights(&factors[opts.weight_axis], &DVector::from_column_slice(one_way.values()))?;
    if weights.iter().any(|w| *w == 0.0 || !w.is_finite()) {
        return Err(Error::Singular {
            condition: f64::INFINITY,
        });
    }
    let identified = QadDecomposition::new(factors, weights)?;
    let decomposition = apply_scale_convention(&identified, x, opts.scale)?;

    let norm = x.frobenius_norm();
    let diff = x.distance(&decomposition.compose())?;
    let residual = if norm > 0.0 { diff / norm } else { diff };
    if !(residual <= opts.alignment_bound) {
        return Err(Error::AlignmentFailure {
            residual,
            bound: opts.alignment_bound,
        });
    }
    Ok(DecomposeReport {
        decomposition,
        criterion: fits.iter().map(|f| f.jd.criterion).sum(),
        residual,
        rank_gaps: fits.iter().map(|f| f.whitening.rank_gap).collect(),
        warnings,
        fits,
    })
}

/// Re-express `dec` under `convention`. `x` is the array the weights are
/// refit against for [`ScaleConvention::UnitNorm`].
pub fn apply_scale_convention(
    dec: &QadDecomposition,
    x: &MultiwayArray,
    convention: ScaleConvention,
) -> Result<QadDecomposition> {
    match convention {
        ScaleConvention::Identified => Ok(dec.clone()),
        ScaleConvention::SumToOne => {
            let scales: Vec<Vec<f64>> = dec
                .factors()
                .iter()
                .map(|f| f.column_iter().map(|c| 1.0 / c.sum()).collect())
                .collect();
            if scales.iter().flatten().any(|s| !s.is_finite()) {
                return Err(Error::InvalidArgument("factor column sums to zero".into()));
            }
            dec.rescaled(&scales)
        }
        ScaleConvention::UnitNorm => {
            let factors: Vec<DMatrix<f64>> = dec.factors().iter().map(unit_norm_columns).collect();
            let refs: Vec<&DMatrix<f64>> = factors.iter().collect();
            let design = multiway::khatri_rao_columns(&refs)?;
            let weights = linalg::least_squares(&design, &DVector::from_column_slice(x.values()), 1e12)?;
            QadDecomposition::new(factors, weights)
        }
    }
}

/// Unit-norm columns with the largest-magnitude entry positive.
pub fn unit_norm_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut c in out.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
        let imax = c.iamax();
        if c[imax] < 0.0 {
            c.neg_mut();
        }
    }
    out
}
