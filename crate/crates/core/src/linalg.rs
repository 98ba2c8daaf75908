//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Column-stacking `vec` operator.
pub fn vec_cols(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_cols`].
pub fn unvec_cols(v: &[f64], nrows: usize, ncols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(nrows, ncols, v)
}

/// Row-major nested representation used by the JSON formats.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Thin singular value decomposition `m = U diag(s) V'` with `s`
/// nonincreasing.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn svd(m: &DMatrix<f64>) -> Result<Svd> {
    let (nr, nc) = m.shape();
    if nr == 0 || nc == 0 {
        return Err(Error::DimensionMismatch("SVD of an empty matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("SVD of a matrix with non-finite entries".into()));
    }
    let fm = faer::Mat::<f64>::from_fn(nr, nc, |i, j| m[(i, j)]);
    let dec = fm
        .thin_svd()
        .map_err(|e| Error::InvalidArgument(format!("SVD failed: {e:?}")))?;
    let k = nr.min(nc);
    let (fu, fs, fv) = (dec.U(), dec.S().column_vector(), dec.V());
    Ok(Svd {
        u: DMatrix::from_fn(nr, k, |i, j| fu[(i, j)]),
        s: DVector::from_fn(k, |i, _| fs[i]),
        v: DMatrix::from_fn(nc, k, |i, j| fv[(i, j)]),
    })
}

/// 2-norm condition number; infinite when the matrix is singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let Ok(dec) = svd(m) else {
        return f64::INFINITY;
    };
    let max = dec.s.max();
    let min = if m.nrows() == m.ncols() || dec.s.len() == m.ncols() { dec.s.min() } else { 0.0 };
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse that refuses matrices whose condition number exceeds `cap`.
pub fn checked_inverse(m: &DMatrix<f64>, cap: f64) -> Result<DMatrix<f64>> {
    let condition = condition_number(m);
    if !(condition <= cap) {
        return Err(Error::Singular { condition });
    }
    m.clone()
        .try_inverse()
        .ok_or(Error::Singular { condition })
}

/// Least-squares solution of `a x = b` for full-column-rank `a`.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>, cap: f64) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows, response has {}",
            a.nrows(),
            b.len()
        )));
    }
    if a.ncols() > a.nrows() {
        return Err(Error::Singular {
            condition: f64::INFINITY,
        });
    }
    let condition = condition_number(a);
    if !(condition <= cap) {
        return Err(Error::Singular { condition });
    }
    let dec = svd(a)?;
    let ub = dec.u.transpose() * b;
    Ok(&dec.v * ub.component_div(&dec.s))
}

/// Moore–Penrose pseudo-inverse with a relative singular-value cutoff.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let Ok(dec) = svd(m) else {
        return DMatrix::zeros(m.ncols(), m.nrows());
    };
    let smax = dec.s.max();
    let eps = rel_tol * smax.max(f64::MIN_POSITIVE);
    let sinv = dec.s.map(|x| if x > eps { 1.0 / x } else { 0.0 });
    &dec.v * DMatrix::from_diagonal(&sinv) * dec.u.transpose()
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    if n == 0 {
        return Vec::new();
    }
    let sum: f64 = v.iter().sum();
    if v.iter().all(|&x| x >= 0.0) && sum == 1.0 {
        return v.to_vec();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Sum with pairwise (cascade) reduction; result is independent of how the
/// caller chunks work and much less sensitive to ordering than a running sum.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise-reduced mean of per-item vectors of length `dim`. `fill(m, buf)`
/// adds the contribution of item `m` into `buf`.
pub fn pairwise_mean<F>(n: usize, dim: usize, fill: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    fn rec<F: Fn(usize, &mut [f64]) + Sync>(lo: usize, hi: usize, dim: usize, fill: &F) -> Vec<f64> {
        const BLOCK: usize = 32;
        let mut acc = vec![0.0; dim];
        if hi - lo <= BLOCK {
            for m in lo..hi {
                fill(m, &mut acc);
            }
            return acc;
        }
        let mid = lo + (hi - lo) / 2;
        let left = rec(lo, mid, dim, fill);
        let right = rec(mid, hi, dim, fill);
        for ((a, l), r) in acc.iter_mut().zip(left).zip(right) {
            *a = l + r;
        }
        acc
    }
    if n == 0 {
        return vec![0.0; dim];
    }
    let mut total = rec(0, n, dim, &fill);
    let inv = 1.0 / n as f64;
    total.iter_mut().for_each(|t| *t *= inv);
    total
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        out.push(p.clone());
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else {
            break;
        };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).unwrap();
        p.swap(i - 1, j);
        p[i..].reverse();
    }
    out
}

/// Assignment `sigma` maximizing `sum_j score[(j, sigma[j])]`. Exhaustive up to
/// `exhaustive_max` columns, greedy beyond.
pub fn best_assignment(score: &DMatrix<f64>, exhaustive_max: usize) -> Vec<usize> {
    let r = score.nrows();
    assert_eq!(r, score.ncols(), "assignment needs a square score matrix");
    if r <= exhaustive_max {
        let mut best = (f64::NEG_INFINITY, (0..r).collect::<Vec<_>>());
        for p in permutations(r) {
            let s: f64 = p.iter().enumerate().map(|(j, &k)| score[(j, k)]).sum();
            if s > best.0 {
                best = (s, p);
            }
        }
        return best.1;
    }
    let mut sigma = vec![usize::MAX; r];
    let mut used_row = vec![false; r];
    let mut used_col = vec![false; r];
    for _ in 0..r {
        let mut arg = (0, 0);
        let mut val = f64::NEG_INFINITY;
        for i in (0..r).filter(|&i| !used_row[i]) {
            for k in (0..r).filter(|&k| !used_col[k]) {
                if score[(i, k)] > val {
                    val = score[(i, k)];
                    arg = (i, k);
                }
            }
        }
        sigma[arg.0] = arg.1;
        used_row[arg.0] = true;
        used_col[arg.1] = true;
    }
    sigma
}

/// Absolute cosine between every column of `a` and every column of `b`.
pub fn abs_cosines(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.ncols(), b.ncols(), |i, k| {
        let x = a.column(i);
        let y = b.column(k);
        let d = x.norm() * y.norm();
        if d == 0.0 {
            0.0
        } else {
            (x.dot(&y) / d).abs()
        }
    })
}

/// Reorder the columns of `m` so that output column `j` is input column `sigma[j]`.
pub fn permute_columns(m: &DMatrix<f64>, sigma: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), sigma.len(), |i, j| m[(i, sigma[j])])
}
