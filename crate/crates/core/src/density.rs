//! Orthogonal-series estimation of component densities in continuous
//! mixtures.
//!
//! A sample of `n` draws of `q` conditionally independent variables is
//! reduced to basis moments. Decomposing the moment array through a pivot
//! `i` yields per-observation weights `ω_mj = e_j' Ω̂_m e_j`; weighted sample
//! means of `φ_k(Y_im)` are then the Fourier coefficients of the density of
//! `Yᵢ` in component `j`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::basis::Basis;
use crate::decompose::{self, DecomposeOptions, PivotFit};
use crate::error::{Error, Result};
use crate::linalg::{self, checked_inverse, pairwise_mean};
use crate::multiway::{MultiwayArray, SubmodelProvider};

pub const DEFAULT_KAPPA: usize = 10;
pub const DEFAULT_KAPPA_MAX: usize = 10;

/// A sample together with its basis evaluations `φ_k(Y_im) ρ(Y_im)`, `k ≤ κᵢ`.
#[derive(Clone, Debug)]
pub struct MomentSample {
    basis: Basis,
    kappas: Vec<usize>,
    columns: Vec<Vec<f64>>,
    designs: Vec<DMatrix<f64>>,
}

impl MomentSample {
    /// `sample` is `n × q`, one row per draw.
    pub fn new(sample: &DMatrix<f64>, basis: Basis, kappas: &[usize]) -> Result<Self> {
        let columns: Vec<Vec<f64>> = sample.column_iter().map(|c| c.iter().copied().collect()).collect();
        Self::from_columns(columns, basis, kappas)
    }

    pub fn from_columns(columns: Vec<Vec<f64>>, basis: Basis, kappas: &[usize]) -> Result<Self> {
        if columns.len() != kappas.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} variables but {} truncations",
                columns.len(),
                kappas.len()
            )));
        }
        if kappas.contains(&0) {
            return Err(Error::InvalidArgument("truncations must be at least 1".into()));
        }
        let n = columns.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(Error::TooFewObservations { needed: 1, got: 0 });
        }
        for (i, c) in columns.iter().enumerate() {
            if c.len() != n {
                return Err(Error::DimensionMismatch(format!("variable {i} has {} draws, expected {n}", c.len())));
            }
            if let Some(m) = c.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: m, col: i });
            }
        }
        let designs = columns
            .iter()
            .zip(kappas)
            .map(|(c, &k)| basis.design(c, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(MomentSample {
            basis,
            kappas: kappas.to_vec(),
            columns,
            designs,
        })
    }

    pub fn n(&self) -> usize {
        self.columns[0].len()
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn kappas(&self) -> &[usize] {
        &self.kappas
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }

    /// `n × κᵢ` matrix of basis evaluations for variable `i`.
    pub fn design(&self, i: usize) -> &DMatrix<f64> {
        &self.designs[i]
    }

    /// `⊙_{i∈group} 𝛗_{κᵢ}(Y_im) ρ(Y_im)`, first listed variable slowest.
    pub fn khatri_rao_row(&self, m: usize, group: &[usize]) -> Vec<f64> {
        let mut out = vec![1.0];
        for &i in group {
            let d = &self.designs[i];
            let mut next = Vec::with_capacity(out.len() * d.ncols());
            for &a in &out {
                for k in 0..d.ncols() {
                    next.push(a * d[(m, k)]);
                }
            }
            out = next;
        }
        out
    }

    pub fn moment_array(&self) -> Result<MomentArray> {
        let all: Vec<usize> = (0..self.kappas.len()).collect();
        Ok(MomentArray {
            array: self.submodel(&all)?,
            n: self.n(),
            basis: self.basis,
            kappas: self.kappas.clone(),
        })
    }
}

impl SubmodelProvider for MomentSample {
    fn order(&self) -> usize {
        self.kappas.len()
    }

    /// Sample mean of `⊗_{i∈keep} 𝛗_{κᵢ}(Y_im) ρ(Y_im)`.
    fn submodel(&self, keep: &[usize]) -> Result<MultiwayArray> {
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        if keep.is_empty() {
            return Err(Error::EmptySet);
        }
        if let Some(&a) = keep.iter().find(|&&a| a >= self.order()) {
            return Err(Error::OutOfRange {
                index: a,
                len: self.order(),
            });
        }
        let dims: Vec<usize> = keep.iter().map(|&i| self.kappas[i]).collect();
        let len = dims.iter().product();
        let values = pairwise_mean(self.n(), len, |m, acc| {
            for (a, v) in acc.iter_mut().zip(self.khatri_rao_row(m, &keep)) {
                *a += v;
            }
        });
        MultiwayArray::new(dims, values)
    }
}

/// Sample mean `𝔹̂` of the outer products of basis evaluations.
#[derive(Clone, Debug)]
pub struct MomentArray {
    pub array: MultiwayArray,
    pub n: usize,
    pub basis: Basis,
    pub kappas: Vec<usize>,
}

pub fn moment_array(sample: &DMatrix<f64>, basis: Basis, kappas: &[usize]) -> Result<MomentArray> {
    MomentSample::new(sample, basis, kappas)?.moment_array()
}

/// Per-observation weights `ω_mj = e_j' Ω̂_m e_j` for one direction `i`.
#[derive(Clone, Debug)]
pub struct ClassificationWeights {
    /// `n × r`.
    pub omega: DMatrix<f64>,
    pub direction: usize,
    pub q: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub q1: Vec<usize>,
    pub q2: Vec<usize>,
}

impl ClassificationWeights {
    pub fn rank(&self) -> usize {
        self.omega.ncols()
    }

    pub fn column_means(&self) -> DVector<f64> {
        let n = self.omega.nrows() as f64;
        DVector::from_iterator(self.rank(), self.omega.column_iter().map(|c| c.sum() / n))
    }

    /// Reorder components: output `j` ← input `sigma[j]`.
    pub fn permuted(&self, sigma: &[usize]) -> ClassificationWeights {
        ClassificationWeights {
            omega: linalg::permute_columns(&self.omega, sigma),
            q: linalg::permute_columns(&self.q, sigma),
            ..self.clone()
        }
    }
}

/// Weights from an existing pivot fit on the sample's moment array.
pub fn weights_from_fit(sample: &MomentSample, fit: &PivotFit) -> Result<ClassificationWeights> {
    let r = fit.jd.q.ncols();
    let n = sample.n();
    let omega = if r == 1 {
        // the estimator collapses to the plain series estimator
        DMatrix::from_element(n, 1, 1.0)
    } else {
        let qinv = checked_inverse(&fit.jd.q, 1e12)?;
        let left = &qinv * &fit.whitening.w1;
        let right = fit.jd.q.transpose() * &fit.whitening.w2;
        let mut omega = DMatrix::zeros(n, r);
        for m in 0..n {
            let u = DVector::from_vec(sample.khatri_rao_row(m, &fit.q1));
            let v = DVector::from_vec(sample.khatri_rao_row(m, &fit.q2));
            let a = &left * u;
            let b = &right * v;
            for j in 0..r {
                omega[(m, j)] = a[j] * b[j];
            }
        }
        omega
    };
    Ok(ClassificationWeights {
        omega,
        direction: fit.pivot,
        q: fit.jd.q.clone(),
        w1: fit.whitening.w1.clone(),
        w2: fit.whitening.w2.clone(),
        q1: fit.q1.clone(),
        q2: fit.q2.clone(),
    })
}

/// Decompose the moment array with `direction` as pivot and return the
/// classification weights for that direction.
pub fn classification_weights(
    sample: &MomentSample,
    r: usize,
    direction: usize,
    partition: Option<(Vec<usize>, Vec<usize>)>,
    opts: &DecomposeOptions,
) -> Result<ClassificationWeights> {
    if direction >= sample.order() {
        return Err(Error::OutOfRange {
            index: direction,
            len: sample.order(),
        });
    }
    let x = sample.moment_array()?.array;
    let fit = decompose::fit_pivot(&x, sample, r, direction, partition, opts, &mut Vec::new())?;
    weights_from_fit(sample, &fit)
}

fn basis_column(sample: &MomentSample, i: usize, kmax: usize) -> Result<DMatrix<f64>> {
    if kmax <= sample.kappas()[i] {
        Ok(sample.design(i).columns(0, kmax).into_owned())
    } else {
        sample.basis().design(sample.column(i), kmax)
    }
}

/// `n⁻¹ Σ_m ω_mj φ_k(Y_im) ρ(Y_im)`, `k ≥ 1` (may exceed `κᵢ`).
pub fn fourier_coefficient(weights: &ClassificationWeights, sample: &MomentSample, j: usize, k: usize) -> Result<f64> {
    Ok(weighted_moments(weights, sample, j, k)?.0[k - 1])
}

/// Coefficients `b̂_k` and `s_k = Σ_m ω_mj² φ_k(Y_im)²` for `k ≤ kmax`.
fn weighted_moments(weights: &ClassificationWeights, sample: &MomentSample, j: usize, kmax: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if kmax == 0 {
        return Err(Error::InvalidArgument("basis indices start at 1".into()));
    }
    if j >= weights.rank() {
        return Err(Error::OutOfRange {
            index: j,
            len: weights.rank(),
        });
    }
    if weights.omega.nrows() != sample.n() {
        return Err(Error::DimensionMismatch("weights and sample have different sizes".into()));
    }
    let design = basis_column(sample, weights.direction, kmax)?;
    let n = sample.n();
    let both = pairwise_mean(n, 2 * kmax, |m, acc| {
        let w = weights.omega[(m, j)];
        for k in 0..kmax {
            let t = w * design[(m, k)];
            acc[k] += t;
            acc[kmax + k] += t * t;
        }
    });
    let b = both[..kmax].to_vec();
    let s = both[kmax..].iter().map(|v| v * n as f64).collect();
    Ok((b, s))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesDensityEstimate {
    /// Variable index.
    pub i: usize,
    /// Component index.
    pub j: usize,
    pub kappa: usize,
    pub coefficients: Vec<f64>,
    pub basis: Basis,
}

impl SeriesDensityEstimate {
    /// `Σ_{k≤ϰ} b̂_k φ_k(y)`; zero outside the basis support.
    pub fn evaluate(&self, y: f64) -> f64 {
        self.basis.series(&self.coefficients, y)
    }
}

pub fn estimate_density(
    weights: &ClassificationWeights,
    sample: &MomentSample,
    j: usize,
    kappa: usize,
) -> Result<SeriesDensityEstimate> {
    let (b, _) = weighted_moments(weights, sample, j, kappa)?;
    Ok(SeriesDensityEstimate {
        i: weights.direction,
        j,
        kappa,
        coefficients: b,
        basis: sample.basis(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub chosen: usize,
    /// Criterion for `ϰ = 1, …, ϰ_max`.
    pub scores: Vec<f64>,
}

/// Minimize `Σ_{k≤ϰ} b̂_k² − 2/(n(n−1)) Σ_m Σ_{o≠m} ω_m ω_o Σ_{k≤ϰ} φ_k(Y_o)φ_k(Y_m)`
/// over `ϰ ∈ 1..=ϰ_max`. Ties go to the smaller `ϰ`.
pub fn cross_validate(
    weights: &ClassificationWeights,
    sample: &MomentSample,
    j: usize,
    kappa_max: usize,
) -> Result<CrossValidation> {
    let n = sample.n();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n });
    }
    let (b, s) = weighted_moments(weights, sample, j, kappa_max)?;
    let nf = n as f64;
    let mut scores = Vec::with_capacity(kappa_max);
    let mut acc = 0.0;
    for k in 0..kappa_max {
        let cross = (nf * b[k]).powi(2) - s[k];
        acc += b[k] * b[k] - 2.0 * cross / (nf * (nf - 1.0));
        scores.push(acc);
    }
    let chosen = scores
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (k, &v)| if v < best.1 { (k, v) } else { best })
        .0
        + 1;
    Ok(CrossValidation { chosen, scores })
}

/// `σ̂(y)`: the sample standard deviation of `ω_m Σ_{k≤ϰ} φ_k(Y_m)φ_k(y)`.
pub fn pointwise_se(
    weights: &ClassificationWeights,
    sample: &MomentSample,
    estimate: &SeriesDensityEstimate,
    y: f64,
) -> Result<f64> {
    let kappa = estimate.kappa;
    let design = basis_column(sample, weights.direction, kappa)?;
    let mut phi_y = vec![0.0; kappa];
    sample.basis().fill(y, &mut phi_y);
    let rho = sample.basis().rho(y);
    let fhat = estimate.evaluate(y);
    let j = estimate.j;
    let v = pairwise_mean(sample.n(), 1, |m, acc| {
        let mut t = 0.0;
        for k in 0..kappa {
            t += design[(m, k)] * phi_y[k];
        }
        let d = weights.omega[(m, j)] * t * rho - fhat;
        acc[0] += d * d;
    });
    Ok(v[0].sqrt())
}

/// Two-sided normal quantile for `level` (0.95 → 1.959964…).
pub fn z_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level {level} not in (0, 1)")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}

/// `f̂(y) ± z σ̂(y)/√n`.
pub fn confidence_interval(
    weights: &ClassificationWeights,
    sample: &MomentSample,
    estimate: &SeriesDensityEstimate,
    y: f64,
    level: f64,
) -> Result<(f64, f64)> {
    let z = z_value(level)?;
    let half = z * pointwise_se(weights, sample, estimate, y)? / (sample.n() as f64).sqrt();
    let f = estimate.evaluate(y);
    Ok((f - half, f + half))
}

/// Grid evaluation as CSV with columns `y,fhat,se,lo,hi`.
pub fn grid_csv(
    weights: &ClassificationWeights,
    sample: &MomentSample,
    estimate: &SeriesDensityEstimate,
    ys: &[f64],
    level: f64,
) -> Result<String> {
    let z = z_value(level)?;
    let sqrt_n = (sample.n() as f64).sqrt();
    let mut out = String::from("y,fhat,se,lo,hi\n");
    for &y in ys {
        let f = estimate.evaluate(y);
        let se = pointwise_se(weights, sample, estimate, y)?;
        let half = z * se / sqrt_n;
        out.push_str(&format!("{y},{f},{se},{},{}\n", f - half, f + half));
    }
    Ok(out)
}
