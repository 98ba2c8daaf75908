//! Nonorthogonal joint approximate diagonalization.
//!
//! Given `κ` real `r×r` matrices `C₁ … C_κ`, find `Q` with `det Q = 1` and
//! equal column norms minimizing
//!
//! ```text
//! Σₖ ‖off(Q⁻¹ Cₖ Q)‖²_F
//! ```
//!
//! The solver runs Jacobi-like sweeps over column pairs `(p, q)`. Each
//! elementary step combines an upper and a lower shear on the pair,
//! `Q ← Q (I + a e_p e_q' + b e_q e_p')`, followed by renormalizing the two
//! touched columns back to unit length. The pair `(a, b)` is the
//! Gauss–Newton minimizer of the pair-restricted criterion (a closed-form
//! 2×2 solve), safeguarded by a halving line search so every accepted step
//! strictly lowers the criterion. Rotations are the antisymmetric special
//! case of the two shears, so they need no separate move.
//!
//! Working with unit-norm columns keeps every iterate in the admissible set
//! up to a global scalar; the scalar is fixed at the end so that `det Q = 1`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, checked_inverse};

#[derive(Clone, Debug, PartialEq)]
pub struct JointDiagProblem {
    matrices: Vec<DMatrix<f64>>,
}

impl JointDiagProblem {
    pub fn new(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        if matrices.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "joint diagonalization needs at least two matrices, got {}",
                matrices.len()
            )));
        }
        let r = matrices[0].nrows();
        if r == 0 {
            return Err(Error::InvalidArgument("empty matrices".into()));
        }
        for (k, m) in matrices.iter().enumerate() {
            if m.nrows() != r || m.ncols() != r {
                return Err(Error::DimensionMismatch(format!(
                    "matrix {k} is {}x{}, expected {r}x{r}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("matrix {k} has non-finite entries")));
            }
        }
        Ok(JointDiagProblem { matrices })
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn count(&self) -> usize {
        self.matrices.len()
    }

    /// `vec(C)` of the concatenation `C = (C₁, …, C_κ)`.
    pub fn vec(&self) -> DVector<f64> {
        let r = self.dim();
        DVector::from_iterator(
            r * r * self.count(),
            self.matrices.iter().flat_map(|m| m.as_slice().iter().copied()),
        )
    }

    /// Inverse of [`JointDiagProblem::vec`].
    pub fn from_vec(v: &DVector<f64>, r: usize) -> Result<Self> {
        if r == 0 || !v.len().is_multiple_of(r * r) {
            return Err(Error::DimensionMismatch(format!("length {} is not a multiple of r^2", v.len())));
        }
        let mats = v
            .as_slice()
            .chunks(r * r)
            .map(|c| linalg::unvec_cols(c, r, r))
            .collect();
        Self::new(mats)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    matrices: Vec<Vec<Vec<f64>>>,
}

impl Serialize for JointDiagProblem {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RawProblem {
            matrices: self.matrices.iter().map(linalg::to_rows).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for JointDiagProblem {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawProblem::deserialize(d)?;
        let mats = raw
            .matrices
            .iter()
            .map(|m| linalg::from_rows(m))
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        JointDiagProblem::new(mats).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointDiagOptions {
    /// Stop when a sweep lowers the criterion by less than this fraction.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Extra seeded random starting points.
    pub restarts: usize,
    pub seed: u64,
    /// Also start from the eigenvectors of a random combination of the stack.
    pub eigen_start: bool,
    /// Bound `m` on the common column norm of `Q`.
    pub norm_cap: f64,
    /// Largest condition number accepted when inverting an iterate.
    pub condition_cap: f64,
    /// Relative distance below which two eigenvalue columns count as colliding.
    pub degeneracy_threshold: f64,
}

impl Default for JointDiagOptions {
    fn default() -> Self {
        JointDiagOptions {
            tol: 1e-12,
            max_sweeps: 200,
            restarts: 5,
            seed: 0,
            eigen_start: true,
            norm_cap: 1e6,
            condition_cap: 1e12,
            degeneracy_threshold: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointDiagResult {
    pub q: DMatrix<f64>,
    /// Diagonal of `Q⁻¹ Cₖ Q`, one vector per input matrix.
    pub diagonals: Vec<DVector<f64>>,
    pub criterion: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Criterion after every sweep of the winning start (entry 0 is the start).
    pub trace: Vec<f64>,
    /// Two columns of the eigenvalue matrix (nearly) coincide.
    pub degenerate: bool,
}

impl JointDiagResult {
    /// `κ × r` matrix whose row `k` is the diagonal of `Dₖ`.
    pub fn eigenvalue_matrix(&self) -> DMatrix<f64> {
        let r = self.q.nrows();
        DMatrix::from_fn(self.diagonals.len(), r, |k, j| self.diagonals[k][j])
    }

    pub fn diagonal_matrices(&self) -> Vec<DMatrix<f64>> {
        self.diagonals.iter().map(DMatrix::from_diagonal).collect()
    }

    /// Reorder the joint eigenvectors (and eigenvalues) by `sigma`.
    pub fn permuted(&self, sigma: &[usize]) -> JointDiagResult {
        let mut out = self.clone();
        out.q = linalg::permute_columns(&self.q, sigma);
        out.diagonals = self
            .diagonals
            .iter()
            .map(|d| DVector::from_iterator(sigma.len(), sigma.iter().map(|&k| d[k])))
            .collect();
        if sigma_is_odd(sigma) {
            // keep det Q = +1
            let c = out.q.ncols() - 1;
            out.q.column_mut(c).neg_mut();
        }
        out
    }
}

fn sigma_is_odd(sigma: &[usize]) -> bool {
    let mut seen = vec![false; sigma.len()];
    let mut transpositions = 0;
    for start in 0..sigma.len() {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut k = start;
        while !seen[k] {
            seen[k] = true;
            k = sigma[k];
            len += 1;
        }
        transpositions += len - 1;
    }
    transpositions % 2 == 1
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResult {
    q: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
    criterion: f64,
    sweeps: usize,
    converged: bool,
    trace: Vec<f64>,
    warnings: Vec<String>,
}

impl Serialize for JointDiagResult {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut warnings = Vec::new();
        if self.degenerate {
            warnings.push("eigenvalue columns nearly coincide".to_string());
        }
        if !self.converged {
            warnings.push("did not converge".to_string());
        }
        RawResult {
            q: linalg::to_rows(&self.q),
            d: self.diagonals.iter().map(|d| d.iter().copied().collect()).collect(),
            criterion: self.criterion,
            sweeps: self.sweeps,
            converged: self.converged,
            trace: self.trace.clone(),
            warnings,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for JointDiagResult {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawResult::deserialize(d)?;
        let q = linalg::from_rows(&raw.q).map_err(serde::de::Error::custom)?;
        Ok(JointDiagResult {
            q,
            diagonals: raw.d.into_iter().map(DVector::from_vec).collect(),
            criterion: raw.criterion,
            sweeps: raw.sweeps,
            converged: raw.converged,
            trace: raw.trace,
            degenerate: raw.warnings.iter().any(|w| w.contains("coincide")),
        })
    }
}

fn off_norm2(m: &DMatrix<f64>) -> f64 {
    let r = m.nrows();
    let mut s = 0.0;
    for j in 0..r {
        for i in 0..r {
            if i != j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
    }
    s
}

/// `Σₖ ‖off(Q⁻¹ Cₖ Q)‖²_F`.
pub fn off_criterion(q: &DMatrix<f64>, problem: &JointDiagProblem) -> Result<f64> {
    off_criterion_capped(q, problem, JointDiagOptions::default().condition_cap)
}

pub fn off_criterion_capped(q: &DMatrix<f64>, problem: &JointDiagProblem, condition_cap: f64) -> Result<f64> {
    if q.nrows() != problem.dim() || q.ncols() != problem.dim() {
        return Err(Error::DimensionMismatch(format!(
            "Q is {}x{}, problem has r = {}",
            q.nrows(),
            q.ncols(),
            problem.dim()
        )));
    }
    let qinv = checked_inverse(q, condition_cap)?;
    Ok(problem
        .matrices
        .iter()
        .map(|c| off_norm2(&(&qinv * c * q)))
        .sum())
}

struct Run {
    u: DMatrix<f64>,
    criterion: f64,
    sweeps: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn transformed(u: &DMatrix<f64>, mats: &[DMatrix<f64>], cap: f64) -> Result<Vec<DMatrix<f64>>> {
    let uinv = checked_inverse(u, cap)?;
    Ok(mats.iter().map(|c| &uinv * c * u).collect())
}

/// Apply `M ← Λ⁻¹ T⁻¹ M T Λ` for the pair move, touching rows/cols p, q only.
fn apply_pair(m: &mut DMatrix<f64>, p: usize, q: usize, a: f64, b: f64, sp: f64, sq: f64) {
    let r = m.nrows();
    for i in 0..r {
        let mp = m[(i, p)];
        let mq = m[(i, q)];
        m[(i, q)] = mq + a * mp;
        m[(i, p)] = mp + b * mq;
    }
    let det = 1.0 - a * b;
    for j in 0..r {
        let mp = m[(p, j)];
        let mq = m[(q, j)];
        m[(p, j)] = (mp - a * mq) / det;
        m[(q, j)] = (mq - b * mp) / det;
    }
    // M_ij ← M_ij s_j / s_i
    for j in 0..r {
        m[(p, j)] /= sp;
        m[(q, j)] /= sq;
    }
    for i in 0..r {
        m[(i, p)] *= sp;
        m[(i, q)] *= sq;
    }
}

/// One Gauss–Newton pair step with backtracking. Returns the new criterion.
fn pair_step(u: &mut DMatrix<f64>, ms: &mut [DMatrix<f64>], p: usize, q: usize, crit: f64) -> f64 {
    let r = u.nrows();
    let gamma = u.column(p).dot(&u.column(q));
    let (mut haa, mut hab, mut hbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for m in ms.iter() {
        for i in 0..r {
            for j in 0..r {
                if i == j || !(i == p || i == q || j == p || j == q) {
                    continue;
                }
                let mij = m[(i, j)];
                let ind = |c: bool| if c { 1.0 } else { 0.0 };
                let ja = m[(i, p)] * ind(j == q) - ind(i == p) * m[(q, j)]
                    + gamma * mij * (ind(i == q) - ind(j == q));
                let jb = m[(i, q)] * ind(j == p) - ind(i == q) * m[(p, j)]
                    + gamma * mij * (ind(i == p) - ind(j == p));
                haa += ja * ja;
                hab += ja * jb;
                hbb += jb * jb;
                ga += ja * mij;
                gb += jb * mij;
            }
        }
    }
    let mut damp = 1e-14 * (haa + hbb);
    let mut det = haa * hbb - hab * hab;
    if !(det > 1e-20 * (haa * hbb).max(f64::MIN_POSITIVE)) {
        damp = 1e-8 * (haa + hbb).max(f64::MIN_POSITIVE);
        det = (haa + damp) * (hbb + damp) - hab * hab;
    }
    if !(det.is_finite() && det > 0.0) {
        return crit;
    }
    let a0 = -((hbb + damp) * ga - hab * gb) / det;
    let b0 = -((haa + damp) * gb - hab * ga) / det;
    if !(a0.is_finite() && b0.is_finite()) || (a0 == 0.0 && b0 == 0.0) {
        return crit;
    }

    let up = u.column(p).into_owned();
    let uq = u.column(q).into_owned();
    let mut t = 1.0;
    for _ in 0..40 {
        let (a, b) = (t * a0, t * b0);
        t *= 0.5;
        if (1.0 - a * b).abs() < 1e-8 {
            continue;
        }
        let np = (&up + b * &uq).norm();
        let nq = (&uq + a * &up).norm();
        if np < 1e-8 || nq < 1e-8 {
            continue;
        }
        let (sp, sq) = (1.0 / np, 1.0 / nq);
        let mut cand: Vec<DMatrix<f64>> = ms.to_vec();
        let mut new_crit = 0.0;
        for m in cand.iter_mut() {
            apply_pair(m, p, q, a, b, sp, sq);
            new_crit += off_norm2(m);
        }
        if new_crit < crit {
            u.set_column(p, &((&up + b * &uq) * sp));
            u.set_column(q, &((&uq + a * &up) * sq));
            ms.clone_from_slice(&cand);
            return new_crit;
        }
    }
    crit
}

fn normalize_columns(u: &mut DMatrix<f64>) -> bool {
    for mut c in u.column_iter_mut() {
        let n = c.norm();
        if !(n > 0.0 && n.is_finite()) {
            return false;
        }
        c /= n;
    }
    true
}

fn descend(mats: &[DMatrix<f64>], start: DMatrix<f64>, opts: &JointDiagOptions) -> Result<Run> {
    let r = start.nrows();
    let mut u = start;
    if !normalize_columns(&mut u) {
        return Err(Error::Singular {
            condition: f64::INFINITY,
        });
    }
    let mut ms = transformed(&u, mats, opts.condition_cap)?;
    let mut crit: f64 = ms.iter().map(off_norm2).sum();
    let scale: f64 = mats.iter().map(|c| c.norm_squared()).sum();
    let floor = scale * 1e-300;
    let mut trace = vec![crit];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        if crit <= floor {
            converged = true;
            break;
        }
        sweeps += 1;
        let before = crit;
        for p in 0..r {
            for q in p + 1..r {
                crit = pair_step(&mut u, &mut ms, p, q, crit);
            }
        }
        // refresh to keep rounding drift out of the iterates
        ms = transformed(&u, mats, opts.condition_cap)?;
        crit = ms.iter().map(off_norm2).sum::<f64>().min(before);
        trace.push(crit);
        if before - crit <= opts.tol * before {
            converged = true;
            break;
        }
    }
    Ok(Run {
        u,
        criterion: crit,
        sweeps,
        converged,
        trace,
    })
}

/// Eigenvectors of a random linear combination of the stack, when they are
/// all real and well separated.
fn eigen_start(mats: &[DMatrix<f64>], rng: &mut ChaCha8Rng) -> Option<DMatrix<f64>> {
    let r = mats[0].nrows();
    let mut m = DMatrix::zeros(r, r);
    for c in mats {
        let w: f64 = StandardNormal.sample(rng);
        m += c * w;
    }
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let eig = m.complex_eigenvalues();
    if eig.iter().any(|z| z.im.abs() > 1e-8 * scale) {
        return None;
    }
    let mut vals: Vec<f64> = eig.iter().map(|z| z.re).collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    if vals.windows(2).any(|w| (w[1] - w[0]).abs() < 1e-10 * scale) {
        return None;
    }
    let mut v = DMatrix::zeros(r, r);
    for (j, &lam) in vals.iter().enumerate() {
        let shifted = &m - DMatrix::identity(r, r) * lam;
        let dec = linalg::svd(&shifted).ok()?;
        v.set_column(j, &dec.v.column(r - 1));
    }
    Some(v)
}

/// Joint approximate diagonalizer of the stack.
///
/// Starts from the identity, optionally from an eigenvector warm start, and
/// from `opts.restarts` seeded random matrices; keeps the lowest criterion.
/// A run that exhausts `max_sweeps` is reported as [`Error::NonConvergence`]
/// carrying the best iterate.
pub fn solve(problem: &JointDiagProblem, opts: &JointDiagOptions) -> Result<JointDiagResult> {
    let mats = problem.matrices();
    let r = problem.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![DMatrix::identity(r, r)];
    if opts.eigen_start && r > 1 {
        if let Some(v) = eigen_start(mats, &mut rng) {
            starts.push(v);
        }
    }
    if r > 1 {
        for _ in 0..opts.restarts {
            starts.push(DMatrix::from_fn(r, r, |_, _| StandardNormal.sample(&mut rng)));
        }
    }

    let mut best: Option<Run> = None;
    let mut first_err = None;
    for s in starts {
        match descend(mats, s, opts) {
            Ok(run) => {
                if best.as_ref().is_none_or(|b| run.criterion < b.criterion) {
                    best = Some(run);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let Some(run) = best else {
        return Err(first_err.unwrap_or(Error::Singular {
            condition: f64::INFINITY,
        }));
    };

    let mut u = run.u;
    let det = u.determinant();
    if det == 0.0 || !det.is_finite() {
        return Err(Error::Singular {
            condition: f64::INFINITY,
        });
    }
    if det < 0.0 {
        u.column_mut(r - 1).neg_mut();
    }
    let c = det.abs().powf(-1.0 / r as f64);
    if c > opts.norm_cap {
        return Err(Error::NormCap {
            norm: c,
            cap: opts.norm_cap,
        });
    }
    let q = u * c;
    let ms = transformed(&q, mats, opts.condition_cap)?;
    let criterion = ms.iter().map(off_norm2).sum();
    let diagonals: Vec<DVector<f64>> = ms.iter().map(|m| m.diagonal()).collect();
    let degenerate = eigenvalue_collision(&diagonals, opts.degeneracy_threshold);
    let result = JointDiagResult {
        q,
        diagonals,
        criterion,
        sweeps: run.sweeps,
        converged: run.converged,
        trace: run.trace,
        degenerate,
    };
    if result.converged {
        Ok(result)
    } else {
        Err(Error::NonConvergence {
            best: Box::new(result),
        })
    }
}

/// True when two columns of the `κ × r` eigenvalue matrix are closer than
/// `threshold` times its largest entry.
pub fn eigenvalue_collision(diagonals: &[DVector<f64>], threshold: f64) -> bool {
    let r = diagonals.first().map_or(0, |d| d.len());
    let scale = diagonals
        .iter()
        .flat_map(|d| d.iter())
        .fold(0.0f64, |a, &b| a.max(b.abs()))
        .max(f64::MIN_POSITIVE);
    for j1 in 0..r {
        for j2 in j1 + 1..r {
            let dist: f64 = diagonals
                .iter()
                .map(|d| (d[j1] - d[j2]).powi(2))
                .sum::<f64>()
                .sqrt();
            if dist < threshold * scale {
                return true;
            }
        }
    }
    false
}

/// `r² × r²` selection matrix `S_r = diag(vec I_r)`.
pub fn selection_matrix(r: usize) -> DMatrix<f64> {
    DMatrix::from_diagonal(&linalg::vec_cols(&DMatrix::identity(r, r)))
}

/// Kronecker difference `A ⊖ B = A ⊗ I − I ⊗ B`.
pub fn kronecker_difference(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let ia = DMatrix::identity(a.nrows(), a.ncols());
    let ib = DMatrix::identity(b.nrows(), b.ncols());
    a.kronecker(&ib) - ia.kronecker(b)
}

fn block_diag_repeat(block: &DMatrix<f64>, times: usize) -> DMatrix<f64> {
    DMatrix::identity(times, times).kronecker(block)
}

/// First-order map from `vec(Ĉ − C)` to `vec(D̂ − D)`:
/// `H = (I_κ ⊗ S_r)(I_κ ⊗ Q₀' ⊗ Q₀⁻¹)`.
pub fn eigenvalue_map(q0: &DMatrix<f64>, count: usize) -> Result<DMatrix<f64>> {
    let r = q0.nrows();
    let q0inv = checked_inverse(q0, JointDiagOptions::default().condition_cap)?;
    let inner = selection_matrix(r) * q0.transpose().kronecker(&q0inv);
    Ok(block_diag_repeat(&inner, count))
}

/// First-order map from `vec(Ĉ − C)` to `vec(Q̂ − Q₀)`:
/// `G = (I_r ⊗ Q₀)(Σₖ (Dₖ⊖Dₖ)²)⁺ T (I_κ ⊗ Q₀' ⊗ Q₀⁻¹)`, where `T` stacks
/// the `Dₖ⊖Dₖ` side by side. `Q̂` is understood aligned to `Q₀` with
/// `diag(Q₀⁻¹Q̂) = 1`, see [`align_unit_diagonal`].
#[derive(Clone, Debug)]
pub struct EigenvectorMap {
    pub g: DMatrix<f64>,
    /// `Σₖ(Dₖ⊖Dₖ)²` has more than `r` zero eigenvalues.
    pub degenerate: bool,
}

pub fn eigenvector_map(q0: &DMatrix<f64>, diagonals: &[DVector<f64>]) -> Result<EigenvectorMap> {
    let r = q0.nrows();
    let count = diagonals.len();
    if diagonals.iter().any(|d| d.len() != r) {
        return Err(Error::DimensionMismatch("diagonal length differs from r".into()));
    }
    let q0inv = checked_inverse(q0, JointDiagOptions::default().condition_cap)?;
    let diffs: Vec<DMatrix<f64>> = diagonals
        .iter()
        .map(|d| {
            let dm = DMatrix::from_diagonal(d);
            kronecker_difference(&dm, &dm)
        })
        .collect();
    let mut gram = DMatrix::zeros(r * r, r * r);
    for t in &diffs {
        gram += t * t;
    }
    let gram_pinv = linalg::pinv(&gram, 1e-12);
    let scale = gram.diagonal().amax().max(f64::MIN_POSITIVE);
    let zeros = gram.diagonal().iter().filter(|&&v| v <= 1e-12 * scale).count();
    let mut t = DMatrix::zeros(r * r, r * r * count);
    for (k, dk) in diffs.iter().enumerate() {
        t.view_mut((0, k * r * r), (r * r, r * r)).copy_from(dk);
    }
    let left = DMatrix::identity(r, r).kronecker(q0);
    let right = block_diag_repeat(&q0.transpose().kronecker(&q0inv), count);
    Ok(EigenvectorMap {
        g: left * gram_pinv * t * right,
        degenerate: zeros > r,
    })
}

/// Column permutation `sigma` (output `j` ← input `sigma[j]`) matching
/// `q_hat` to `reference` by greedy maximal absolute cosine.
pub fn match_columns(q_hat: &DMatrix<f64>, reference: &DMatrix<f64>) -> Vec<usize> {
    // rows: reference columns, cols: q_hat columns
    let cos = linalg::abs_cosines(reference, q_hat);
    linalg::best_assignment(&cos, 0)
}

/// Align `result` to `reference`: permute by [`match_columns`], then flip
/// signs so that `diag(reference⁻¹ Q̂)` is positive.
pub fn align_to(result: &JointDiagResult, reference: &DMatrix<f64>) -> Result<JointDiagResult> {
    let sigma = match_columns(&result.q, reference);
    let mut out = result.permuted(&sigma);
    let rinv = checked_inverse(reference, JointDiagOptions::default().condition_cap)?;
    let rel = &rinv * &out.q;
    for j in 0..out.q.ncols() {
        if rel[(j, j)] < 0.0 {
            out.q.column_mut(j).neg_mut();
        }
    }
    Ok(out)
}

/// Permute and rescale the columns of `q_hat` so that `diag(Q₀⁻¹ Q̂) = 1`,
/// the normalization under which the eigenvector map is stated.
pub fn align_unit_diagonal(q_hat: &DMatrix<f64>, q0: &DMatrix<f64>) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let sigma = match_columns(q_hat, q0);
    let mut q = linalg::permute_columns(q_hat, &sigma);
    let q0inv = checked_inverse(q0, JointDiagOptions::default().condition_cap)?;
    let rel = &q0inv * &q;
    for j in 0..q.ncols() {
        let d = rel[(j, j)];
        if d == 0.0 {
            return Err(Error::Singular {
                condition: f64::INFINITY,
            });
        }
        q.column_mut(j).unscale_mut(d);
    }
    Ok((sigma, q))
}
