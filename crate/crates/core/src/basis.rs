//! Orthonormal function systems for series estimation.
//!
//! Two families ship: the Hermite functions on ℝ (weight `ρ ≡ 1`) and the
//! normalized Legendre polynomials on `[−1, 1]` (weight `ρ ≡ 1` on the
//! interval). Indices are 1-based, `φ₁` being the lowest-order function.
//!
//! ```
//! use triad::basis::Basis;
//!
//! let h = Basis::hermite();
//! let v = h.eval_vector(3, 0.0).unwrap();
//! assert!((v[0] - std::f64::consts::PI.powf(-0.25)).abs() < 1e-15);
//! assert_eq!(v[1], 0.0);
//! ```

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Hermite,
    Legendre,
}

impl std::fmt::Display for BasisKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BasisKind::Hermite => "hermite",
            BasisKind::Legendre => "legendre",
        })
    }
}

impl std::str::FromStr for BasisKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hermite" => Ok(BasisKind::Hermite),
            "legendre" => Ok(BasisKind::Legendre),
            other => Err(Error::InvalidArgument(format!("unknown basis `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Basis {
    kind: BasisKind,
}

impl Basis {
    pub fn new(kind: BasisKind) -> Self {
        Basis { kind }
    }

    pub fn hermite() -> Self {
        Basis::new(BasisKind::Hermite)
    }

    pub fn legendre() -> Self {
        Basis::new(BasisKind::Legendre)
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn support(&self) -> (f64, f64) {
        match self.kind {
            BasisKind::Hermite => (f64::NEG_INFINITY, f64::INFINITY),
            BasisKind::Legendre => (-1.0, 1.0),
        }
    }

    /// Weight function `ρ`; identically one on the support for both kinds.
    pub fn rho(&self, y: f64) -> f64 {
        let (lo, hi) = self.support();
        if y >= lo && y <= hi {
            1.0
        } else {
            0.0
        }
    }

    /// Bound `ζ_ϰ ≥ sup_y ‖𝛗_ϰ(y)‖`.
    pub fn zeta(&self, kappa: usize) -> f64 {
        match self.kind {
            // |φ_k| ≤ π^{-1/4} for every Hermite function
            BasisKind::Hermite => PI.powf(-0.25) * (kappa as f64).sqrt(),
            BasisKind::Legendre => kappa as f64 / 2f64.sqrt(),
        }
    }

    fn check(&self, y: f64) -> Result<()> {
        let (lo, hi) = self.support();
        if y.is_nan() || y < lo || y > hi {
            return Err(Error::OutOfSupport { point: y, lo, hi });
        }
        Ok(())
    }

    /// Fill `out[k-1] = φ_k(y)` for `k = 1..=out.len()` without support checks.
    pub fn fill(&self, y: f64, out: &mut [f64]) {
        let n = out.len();
        if n == 0 {
            return;
        }
        match self.kind {
            BasisKind::Hermite => {
                out[0] = PI.powf(-0.25) * (-0.5 * y * y).exp();
                if n > 1 {
                    out[1] = 2f64.sqrt() * y * out[0];
                }
                for k in 2..n {
                    let kf = k as f64;
                    out[k] = y * (2.0 / kf).sqrt() * out[k - 1] - ((kf - 1.0) / kf).sqrt() * out[k - 2];
                }
            }
            BasisKind::Legendre => {
                // plain Legendre P_m, then normalize
                let mut p_prev = 1.0;
                let mut p = y;
                out[0] = (0.5f64).sqrt();
                if n > 1 {
                    out[1] = (1.5f64).sqrt() * y;
                }
                for m in 1..n - 1 {
                    let mf = m as f64;
                    let next = ((2.0 * mf + 1.0) * y * p - mf * p_prev) / (mf + 1.0);
                    p_prev = p;
                    p = next;
                    out[m + 1] = ((2.0 * mf + 3.0) / 2.0).sqrt() * p;
                }
            }
        }
    }

    /// `φ_k(y)` for `k ≥ 1`.
    pub fn eval(&self, k: usize, y: f64) -> Result<f64> {
        if k == 0 {
            return Err(Error::InvalidArgument("basis indices start at 1".into()));
        }
        self.check(y)?;
        let mut buf = vec![0.0; k];
        self.fill(y, &mut buf);
        Ok(buf[k - 1])
    }

    /// `𝛗_ϰ(y) = (φ₁(y), …, φ_ϰ(y))'`.
    pub fn eval_vector(&self, kappa: usize, y: f64) -> Result<DVector<f64>> {
        self.check(y)?;
        let mut v = DVector::zeros(kappa);
        self.fill(y, v.as_mut_slice());
        Ok(v)
    }

    /// `n × ϰ` matrix with row `m` equal to `𝛗_ϰ(y_m)' ρ(y_m)`.
    pub fn design(&self, ys: &[f64], kappa: usize) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(ys.len(), kappa);
        let mut buf = vec![0.0; kappa];
        for (m, &y) in ys.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::NonFinite { row: m, col: 0 });
            }
            self.check(y)?;
            self.fill(y, &mut buf);
            for k in 0..kappa {
                out[(m, k)] = buf[k];
            }
        }
        Ok(out)
    }

    /// Gaussian rule with `n` nodes for `∫ g(y) dy` over the support.
    pub fn quadrature(&self, n: usize) -> Arc<QuadratureRule> {
        static CACHE: OnceLock<Mutex<HashMap<(BasisKind, usize), Arc<QuadratureRule>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(rule) = cache.lock().unwrap().get(&(self.kind, n)) {
            return rule.clone();
        }
        let rule = Arc::new(QuadratureRule::gauss(*self, n));
        cache.lock().unwrap().insert((self.kind, n), rule.clone());
        rule
    }

    /// `∫ g(y) dy` over the support, doubling the node count until two
    /// successive rules agree within `tol` (relative to `max(1, |I|)`).
    pub fn integrate<F: Fn(f64) -> f64>(&self, g: F, tol: f64) -> Result<f64> {
        let v = self.integrate_vec(|y, out| out[0] = g(y), 1, 32, tol)?;
        Ok(v[0])
    }

    fn integrate_vec<F: Fn(f64, &mut [f64])>(&self, g: F, dim: usize, start: usize, tol: f64) -> Result<Vec<f64>> {
        const MAX_NODES: usize = 1024;
        let mut n = start.max(8);
        let mut prev = self.quadrature(n).integrate_vec(&g, dim);
        while n < MAX_NODES {
            n *= 2;
            let cur = self.quadrature(n).integrate_vec(&g, dim);
            let scale = cur.iter().fold(1.0f64, |a, b| a.max(b.abs()));
            let diff = cur.iter().zip(&prev).fold(0.0f64, |a, (c, p)| a.max((c - p).abs()));
            if diff <= tol * scale {
                return Ok(cur);
            }
            prev = cur;
        }
        Err(Error::Quadrature { tol, nodes: n })
    }

    /// Fourier coefficients `b_k = ∫ φ_k f ρ`, `k ≤ ϰ`, by quadrature to
    /// agreement `1e-9`.
    pub fn project_fn<F: Fn(f64) -> f64>(&self, f: F, kappa: usize) -> Result<DVector<f64>> {
        let basis = *self;
        let v = self.integrate_vec(
            |y, out| {
                basis.fill(y, out);
                let fy = f(y) * basis.rho(y);
                out.iter_mut().for_each(|o| *o *= fy);
            },
            kappa,
            (2 * kappa).max(32),
            1e-9,
        )?;
        Ok(DVector::from_vec(v))
    }

    /// Sample Fourier coefficients `n⁻¹ Σ_m φ_k(y_m) ρ(y_m)`, `k ≤ ϰ`.
    pub fn project_sample(&self, ys: &[f64], kappa: usize) -> Result<DVector<f64>> {
        let design = self.design(ys, kappa)?;
        let means = crate::linalg::pairwise_mean(ys.len(), kappa, |m, acc| {
            for k in 0..kappa {
                acc[k] += design[(m, k)];
            }
        });
        Ok(DVector::from_vec(means))
    }

    /// `Σ_k b_k φ_k(y)`.
    pub fn series(&self, coefficients: &[f64], y: f64) -> f64 {
        if self.rho(y) == 0.0 {
            return 0.0;
        }
        let mut buf = vec![0.0; coefficients.len()];
        self.fill(y, &mut buf);
        buf.iter().zip(coefficients).map(|(a, b)| a * b).sum()
    }

    /// Gram matrix `∫ φ_j φ_k ρ` for `j, k ≤ ϰ` under an `n`-node rule.
    pub fn gram(&self, kappa: usize, nodes: usize) -> DMatrix<f64> {
        let rule = self.quadrature(nodes);
        let mut g = DMatrix::zeros(kappa, kappa);
        let mut buf = vec![0.0; kappa];
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            self.fill(x, &mut buf);
            for j in 0..kappa {
                for k in 0..kappa {
                    g[(j, k)] += w * buf[j] * buf[k];
                }
            }
        }
        g
    }
}

impl std::fmt::Display for Basis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.kind.fmt(f)
    }
}

/// Nodes and weights for `∫ g(y) dy ≈ Σ wᵢ g(xᵢ)`.
///
/// For the Hermite kind the weights already include the factor `e^{xᵢ²}`,
/// so the rule integrates plain functions that decay like a Gaussian.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    fn gauss(basis: Basis, n: usize) -> QuadratureRule {
        assert!(n >= 1, "a quadrature rule needs at least one node");
        // Golub–Welsch on the orthonormal three-term recurrence
        let off = |k: usize| -> f64 {
            let k = k as f64;
            match basis.kind {
                BasisKind::Hermite => (k / 2.0).sqrt(),
                BasisKind::Legendre => k / (4.0 * k * k - 1.0).sqrt(),
            }
        };
        let mut jac = DMatrix::zeros(n, n);
        for k in 1..n {
            jac[(k - 1, k)] = off(k);
            jac[(k, k - 1)] = off(k);
        }
        let mut nodes: Vec<f64> = jac.symmetric_eigenvalues().iter().copied().collect();
        nodes.sort_by(|a, b| a.total_cmp(b));

        // Newton polish on the degree-n function, then Christoffel weights
        let mut buf = vec![0.0; n + 1];
        for x in nodes.iter_mut() {
            for _ in 0..3 {
                basis.fill(*x, &mut buf);
                let (pn, pn1) = (buf[n], buf[n - 1]);
                let nf = n as f64;
                let deriv = match basis.kind {
                    BasisKind::Hermite => -*x * pn + (2.0 * nf).sqrt() * pn1,
                    BasisKind::Legendre => {
                        // orthonormal p_n = c_n P_n, P_n' = n (x P_n − P_{n−1}) / (x² − 1)
                        let cn = ((2.0 * nf + 1.0) / 2.0).sqrt();
                        let cn1 = ((2.0 * nf - 1.0) / 2.0).sqrt();
                        let (p, q) = (pn / cn, pn1 / cn1);
                        cn * nf * (*x * p - q) / (*x * *x - 1.0)
                    }
                };
                if deriv == 0.0 || !deriv.is_finite() {
                    break;
                }
                let step = pn / deriv;
                if !step.is_finite() {
                    break;
                }
                *x -= step;
            }
        }
        let weights = nodes
            .iter()
            .map(|&x| {
                basis.fill(x, &mut buf[..n]);
                1.0 / buf[..n].iter().map(|v| v * v).sum::<f64>()
            })
            .collect();
        QuadratureRule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        let terms: Vec<f64> = self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * g(x)).collect();
        crate::linalg::pairwise_sum(&terms)
    }

    fn integrate_vec<F: Fn(f64, &mut [f64])>(&self, g: &F, dim: usize) -> Vec<f64> {
        let mut acc = vec![0.0; dim];
        let mut buf = vec![0.0; dim];
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            g(x, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += w * b;
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_hermite(k: usize, y: f64) -> f64 {
        // physicists' h_{k-1} by its own recurrence, then the closed form
        let n = k - 1;
        let (mut h0, mut h1) = (1.0, 2.0 * y);
        let h = if n == 0 {
            1.0
        } else {
            for m in 1..n {
                let next = 2.0 * y * h1 - 2.0 * m as f64 * h0;
                h0 = h1;
                h1 = next;
            }
            h1
        };
        let fact: f64 = (1..=n).map(|m| m as f64).product();
        2f64.powf(-(n as f64) / 2.0) * fact.powf(-0.5) * PI.powf(-0.25) * (-y * y / 2.0).exp() * h
    }

    #[test]
    fn point_values() {
        let h = Basis::hermite();
        assert!((h.eval(1, 0.0).unwrap() - 0.751_125_544_464_942_5).abs() < 1e-15);
        assert_eq!(h.eval(2, 0.0).unwrap(), 0.0);
        let l = Basis::legendre();
        for y in [-1.0, -0.3, 0.0, 0.9, 1.0] {
            assert!((l.eval(1, y).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        }
        assert_eq!(l.eval_vector(1, 0.2).unwrap().as_slice(), &[0.5f64.sqrt()]);
        assert!(matches!(l.eval(1, 1.5), Err(Error::OutOfSupport { .. })));
        assert!(h.eval(0, 0.0).is_err());
    }

    #[test]
    fn recurrence_matches_closed_form() {
        let h = Basis::hermite();
        for k in 1..=12 {
            for i in 0..=50 {
                let y = -5.0 + 0.2 * i as f64;
                let a = h.eval(k, y).unwrap();
                let b = naive_hermite(k, y);
                assert!((a - b).abs() <= 1e-10, "k={k} y={y}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gram_is_identity() {
        for basis in [Basis::hermite(), Basis::legendre()] {
            let g = basis.gram(16, 64);
            let err = (g - DMatrix::identity(16, 16)).amax();
            assert!(err <= 1e-8, "{basis}: {err}");
        }
    }

    #[test]
    fn quadrature_integrates_gaussian_and_polynomials() {
        let h = Basis::hermite();
        let v = h.quadrature(40).integrate(|y| (-y * y / 2.0).exp());
        assert!((v - (2.0 * PI).sqrt()).abs() < 1e-12);
        let l = Basis::legendre();
        let v = l.quadrature(5).integrate(|y| y.powi(8));
        assert!((v - 2.0 / 9.0).abs() < 1e-14);
        let w: f64 = l.quadrature(7).weights.iter().sum();
        assert!((w - 2.0).abs() < 1e-14);
    }

    #[test]
    fn projection_of_basis_function_is_unit_vector() {
        for basis in [Basis::hermite(), Basis::legendre()] {
            let b = basis.project_fn(|y| basis.eval(3, y).unwrap(), 6).unwrap();
            for k in 0..6 {
                let target = if k == 2 { 1.0 } else { 0.0 };
                assert!((b[k] - target).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn projection_of_standard_normal() {
        // φ_k · N(0,1) integrates to π^{-1/4}/√2 for k = 1 and to 0 otherwise
        let h = Basis::hermite();
        let b = h
            .project_fn(|y| (-y * y / 2.0).exp() / (2.0 * PI).sqrt(), 10)
            .unwrap();
        assert!((b[0] - PI.powf(-0.25) / 2f64.sqrt()).abs() <= 1e-8);
        for k in 1..10 {
            assert!(b[k].abs() <= 1e-8);
        }
    }

    #[test]
    fn parseval_on_truncation() {
        let h = Basis::hermite();
        let f = |y: f64| (-(y - 0.7f64).powi(2) / 2.0).exp() / (2.0 * PI).sqrt();
        let b = h.project_fn(f, 8).unwrap();
        let rule = h.quadrature(128);
        let proj_norm = rule.integrate(|y| h.series(b.as_slice(), y).powi(2));
        assert!((proj_norm - b.norm_squared()).abs() <= 1e-10);
    }

    #[test]
    fn sup_norm_bound() {
        let h = Basis::hermite();
        let mut worst = 0.0f64;
        for i in 0..=4000 {
            let y = -20.0 + 0.01 * i as f64;
            worst = worst.max(h.eval_vector(10, y).unwrap().norm());
        }
        assert!(worst <= h.zeta(10));
        let l = Basis::legendre();
        assert!((l.eval_vector(10, 1.0).unwrap().norm() - l.zeta(10)).abs() < 1e-12);
    }

    #[test]
    fn serde_names() {
        assert_eq!(serde_json::to_string(&Basis::hermite()).unwrap(), "\"hermite\"");
        let b: Basis = serde_json::from_str("\"legendre\"").unwrap();
        assert_eq!(b, Basis::legendre());
        assert_eq!("hermite".parse::<BasisKind>().unwrap(), BasisKind::Hermite);
        assert!("chebyshev".parse::<BasisKind>().is_err());
    }

    proptest! {
        #[test]
        fn hermite_vector_norm_is_bounded(y in -30.0f64..30.0, kappa in 1usize..40) {
            let h = Basis::hermite();
            prop_assert!(h.eval_vector(kappa, y).unwrap().norm() <= h.zeta(kappa) * (1.0 + 1e-12));
        }

        #[test]
        fn legendre_vector_norm_is_bounded(y in -1.0f64..=1.0, kappa in 1usize..40) {
            let l = Basis::legendre();
            prop_assert!(l.eval_vector(kappa, y).unwrap().norm() <= l.zeta(kappa) * (1.0 + 1e-12));
        }
    }
}
