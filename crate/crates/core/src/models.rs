//! Model-level estimators built on the decomposition: discrete mixtures of
//! contingency tables, continuous mixtures with series densities, and
//! stationary hidden Markov models observed over three periods.
//!
//! ```
//! use nalgebra::{DMatrix, DVector};
//! use triad::models::{fit_discrete_mixture, DiscreteOptions};
//! use triad::multiway::QadDecomposition;
//!
//! let p = DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.2, 0.8]);
//! let truth = QadDecomposition::new(vec![p.clone(), p.clone(), p], DVector::from_vec(vec![0.5, 0.5])).unwrap();
//! let est = fit_discrete_mixture(&truth.compose(), 2, &DiscreteOptions::default()).unwrap();
//! assert!((est.weights[0] - 0.5).abs() < 1e-8);
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::decompose::{self, DecomposeOptions, DecomposeReport, ScaleConvention};
use crate::density::{self, ClassificationWeights, CrossValidation, MomentSample, SeriesDensityEstimate};
use crate::error::{Error, Result};
use crate::linalg::{self, project_simplex};
use crate::multiway::{ContingencyTable, MultiwayArray, SubmodelProvider};

/// Fraction of a column's absolute mass sitting in negative entries.
fn negative_mass(col: &[f64]) -> f64 {
    let total: f64 = col.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return 0.0;
    }
    col.iter().map(|v| (-v).max(0.0)).sum::<f64>() / total
}

/// Clip negative entries to zero and rescale every column to sum to one.
/// Returns the matrix and the clipped fraction per column.
pub fn to_probability_columns(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let mut out = m.clone();
    let mut clipped = Vec::with_capacity(m.ncols());
    for (j, mut c) in out.column_iter_mut().enumerate() {
        // a column may come out of the decomposition with a flipped sign
        if c.sum() < 0.0 {
            c.neg_mut();
        }
        clipped.push(negative_mass(c.as_slice()));
        c.apply(|v| *v = v.max(0.0));
        let s = c.sum();
        if !(s > 0.0) {
            return Err(Error::InvalidArgument(format!("column {j} has no positive mass")));
        }
        c /= s;
    }
    Ok((out, clipped))
}

fn normalized_table(table: &MultiwayArray) -> Result<MultiwayArray> {
    if table.values().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument("table entries must be finite and nonnegative".into()));
    }
    let total = table.sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("table is empty".into()));
    }
    Ok(table.scaled(1.0 / total))
}

fn identified(opts: &DecomposeOptions) -> DecomposeOptions {
    DecomposeOptions {
        scale: ScaleConvention::Identified,
        ..opts.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscreteOptions {
    pub decompose: DecomposeOptions,
    /// Warn when clipping removes more than this fraction of a column.
    pub clip_bound: f64,
}

impl Default for DiscreteOptions {
    fn default() -> Self {
        DiscreteOptions {
            decompose: DecomposeOptions::default(),
            clip_bound: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscreteMixtureEstimate {
    /// Per-variable `κᵢ × r` column-stochastic matrices.
    #[serde(serialize_with = "ser_matrices")]
    pub factors: Vec<DMatrix<f64>>,
    #[serde(serialize_with = "ser_vector")]
    pub weights: DVector<f64>,
    pub residual: f64,
    pub rank_gaps: Vec<f64>,
    /// Clipped fraction per variable and component.
    pub clipped: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

fn ser_matrices<S: serde::Serializer>(ms: &[DMatrix<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<Vec<f64>>> = ms.iter().map(linalg::to_rows).collect();
    rows.serialize(s)
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    linalg::to_rows(m).serialize(s)
}

fn ser_vector<S: serde::Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    v.as_slice().serialize(s)
}

/// Fit an `r`-component mixture of independent discrete distributions to a
/// `q`-way table of counts or cell probabilities.
pub fn fit_discrete_mixture(table: &MultiwayArray, r: usize, opts: &DiscreteOptions) -> Result<DiscreteMixtureEstimate> {
    if table.order() < 3 {
        return Err(Error::InvalidPartition(format!("need at least three variables, got {}", table.order())));
    }
    let p = normalized_table(table)?;
    let provider = ContingencyTable(&p);
    let report = decompose::recover_all_factors(&p, &provider, r, &identified(&opts.decompose))?;
    let mut warnings = report.warnings.clone();
    let mut factors = Vec::with_capacity(p.order());
    let mut clipped = Vec::with_capacity(p.order());
    for (i, f) in report.decomposition.factors().iter().enumerate() {
        let (m, c) = to_probability_columns(f)?;
        for (j, &frac) in c.iter().enumerate() {
            if frac > opts.clip_bound {
                warnings.push(format!("variable {i}, component {j}: clipping removed {:.1}% of the mass", 100.0 * frac));
            }
        }
        factors.push(m);
        clipped.push(c);
    }
    let axis = opts.decompose.weight_axis;
    let one_way = provider.submodel(&[axis])?;
    let raw = decompose::recover_weights(&factors[axis], &DVector::from_column_slice(one_way.values()))?;
    let weights = DVector::from_vec(project_simplex(raw.as_slice()));
    Ok(DiscreteMixtureEstimate {
        factors,
        weights,
        residual: report.residual,
        rank_gaps: report.rank_gaps,
        clipped,
        warnings,
    })
}

/// Count table of a sample of category codes (`0..levels[i]` for column `i`).
pub fn count_table(sample: &[Vec<usize>], levels: &[usize]) -> Result<MultiwayArray> {
    let mut table = vec![0.0; levels.iter().product()];
    for (m, row) in sample.iter().enumerate() {
        if row.len() != levels.len() {
            return Err(Error::DimensionMismatch(format!("row {m} has {} entries", row.len())));
        }
        let mut off = 0;
        for (i, (&v, &l)) in row.iter().zip(levels).enumerate() {
            if v >= l {
                return Err(Error::OutOfRange { index: v, len: l }).map_err(|e| {
                    Error::InvalidArgument(format!("row {m}, variable {i}: {e}"))
                });
            }
            off = off * l + v;
        }
        table[off] += 1.0;
    }
    MultiwayArray::new(levels.to_vec(), table)
}

/// How many series terms to keep for each density.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truncation {
    /// Cross-validate over `1..=max`.
    CrossValidate { max: usize },
    Fixed(usize),
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::CrossValidate {
            max: density::DEFAULT_KAPPA_MAX,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuousOptions {
    pub basis: Basis,
    /// Per-variable moment truncations; `None` uses 10 for every variable.
    pub kappas: Option<Vec<usize>>,
    pub truncation: Truncation,
    pub decompose: DecomposeOptions,
    pub min_n: usize,
}

impl Default for ContinuousOptions {
    fn default() -> Self {
        ContinuousOptions {
            basis: Basis::hermite(),
            kappas: None,
            truncation: Truncation::default(),
            decompose: DecomposeOptions::default(),
            min_n: 50,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ContinuousMixtureEstimate {
    /// `densities[i][j]`: variable `i`, component `j`.
    pub densities: Vec<Vec<SeriesDensityEstimate>>,
    #[serde(serialize_with = "ser_vector")]
    pub weights: DVector<f64>,
    /// Cross-validation paths, empty for a fixed truncation.
    pub cross_validation: Vec<Vec<CrossValidation>>,
    pub residual: f64,
    pub warnings: Vec<String>,
    /// Classification weights per direction, on the common labeling.
    #[serde(skip)]
    pub classification: Vec<ClassificationWeights>,
    #[serde(skip)]
    pub decomposition: Option<DecomposeReport>,
}

fn check_sample(sample: &DMatrix<f64>, min_n: usize) -> Result<()> {
    if sample.nrows() < min_n {
        return Err(Error::TooFewObservations {
            needed: min_n,
            got: sample.nrows(),
        });
    }
    if sample.ncols() < 3 {
        return Err(Error::InvalidPartition(format!("need at least three variables, got {}", sample.ncols())));
    }
    Ok(())
}

/// Densities for every variable and component of an `r`-component mixture
/// of `q ≥ 3` conditionally independent continuous variables.
pub fn fit_continuous_mixture(sample: &DMatrix<f64>, r: usize, opts: &ContinuousOptions) -> Result<ContinuousMixtureEstimate> {
    check_sample(sample, opts.min_n)?;
    let q = sample.ncols();
    let kappas = opts.kappas.clone().unwrap_or_else(|| vec![density::DEFAULT_KAPPA; q]);
    let ms = MomentSample::new(sample, opts.basis, &kappas)?;
    let x = ms.moment_array()?.array;
    let report = decompose::recover_all_factors(&x, &ms, r, &identified(&opts.decompose))?;
    let mut warnings = report.warnings.clone();
    let weights = DVector::from_vec(project_simplex(report.decomposition.weights().as_slice()));

    let mut densities = Vec::with_capacity(q);
    let mut cvs = Vec::with_capacity(q);
    let mut classification = Vec::with_capacity(q);
    for i in 0..q {
        let w = density::weights_from_fit(&ms, &report.fits[i])?;
        let mut row = Vec::with_capacity(r);
        let mut cv_row = Vec::new();
        for j in 0..r {
            let kappa = match opts.truncation {
                Truncation::Fixed(k) => k,
                Truncation::CrossValidate { max } => {
                    let cv = density::cross_validate(&w, &ms, j, max)?;
                    let k = cv.chosen;
                    cv_row.push(cv);
                    k
                }
            };
            row.push(density::estimate_density(&w, &ms, j, kappa)?);
        }
        densities.push(row);
        cvs.push(cv_row);
        classification.push(w);
    }
    if weights.iter().any(|&p| p == 0.0) {
        warnings.push("a mixing proportion was projected to zero".into());
    }
    Ok(ContinuousMixtureEstimate {
        densities,
        weights,
        cross_validation: cvs,
        residual: report.residual,
        warnings,
        classification,
        decomposition: Some(report),
    })
}

/// Observations of a stationary hidden Markov model over three periods.
#[derive(Clone, Copy, Debug)]
pub enum HmmData<'a> {
    /// Three-way table of counts or probabilities of `(Y₁, Y₂, Y₃)`.
    Table(&'a MultiwayArray),
    /// `n × 3` continuous sample.
    Sample(&'a DMatrix<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmmOptions {
    pub decompose: DecomposeOptions,
    /// Continuous data only.
    pub continuous: ContinuousOptions,
    /// Warn when a simplex repair moves more than this much mass.
    pub repair_bound: f64,
}

impl Default for HmmOptions {
    fn default() -> Self {
        HmmOptions {
            decompose: DecomposeOptions::default(),
            continuous: ContinuousOptions::default(),
            repair_bound: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Emissions {
    /// `κ × r` column-stochastic matrix.
    Discrete(#[serde(serialize_with = "ser_matrix")] DMatrix<f64>),
    Series(Vec<SeriesDensityEstimate>),
}

#[derive(Clone, Debug, Serialize)]
pub struct HmmEstimate {
    pub emissions: Emissions,
    /// `K̂`, rows on the simplex.
    #[serde(serialize_with = "ser_matrix")]
    pub transition: DMatrix<f64>,
    #[serde(serialize_with = "ser_vector")]
    pub stationary: DVector<f64>,
    /// Factor of `Y₁` (`A = PΠKΠ⁻¹`).
    #[serde(serialize_with = "ser_matrix")]
    pub a: DMatrix<f64>,
    /// Factor of `Y₃` (`B = PK'`).
    #[serde(serialize_with = "ser_matrix")]
    pub b: DMatrix<f64>,
    /// Transition matrix through the `A` route, for comparison.
    #[serde(serialize_with = "ser_matrix")]
    pub transition_via_a: DMatrix<f64>,
    /// `‖B̂ − P̂K̂'‖_F / ‖B̂‖_F`.
    pub consistency: f64,
    /// `‖π̂'K̂ − π̂'‖_∞`.
    pub stationarity_gap: f64,
    pub residual: f64,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub classification: Option<ClassificationWeights>,
}

/// Fit a stationary `r`-state hidden Markov model from three consecutive
/// outcomes. Longer series must be reduced to three variables by the caller.
pub fn fit_hmm(data: HmmData<'_>, r: usize, opts: &HmmOptions) -> Result<HmmEstimate> {
    match data {
        HmmData::Table(table) => {
            if table.order() != 3 {
                return Err(Error::DimensionMismatch(format!("expected a three-way table, got order {}", table.order())));
            }
            let p = normalized_table(table)?;
            let provider = ContingencyTable(&p);
            let report = decompose::recover_all_factors(&p, &provider, r, &identified(&opts.decompose))?;
            let mut warnings = report.warnings.clone();
            let mut probs = Vec::new();
            for (i, f) in report.decomposition.factors().iter().enumerate() {
                let (m, c) = to_probability_columns(f)?;
                if let Some(worst) = c.iter().copied().reduce(f64::max) {
                    if worst > opts.repair_bound {
                        warnings.push(format!("variable {i}: clipping removed {:.1}% of a column", 100.0 * worst));
                    }
                }
                probs.push(m);
            }
            let emission = probs[1].clone();
            let marginal = provider.submodel(&[1])?;
            let pi_raw = decompose::recover_weights(&emission, &DVector::from_column_slice(marginal.values()))?;
            let parts = HmmParts {
                p: emission.clone(),
                a: probs[0].clone(),
                b: probs[2].clone(),
                pi_raw,
            };
            finish_hmm(parts, Emissions::Discrete(emission), report.residual, warnings, None, opts)
        }
        HmmData::Sample(sample) => {
            if sample.ncols() != 3 {
                return Err(Error::DimensionMismatch(format!("expected three columns, got {}", sample.ncols())));
            }
            let est = fit_continuous_mixture(sample, r, &opts.continuous)?;
            let report = est.decomposition.as_ref().expect("continuous fits keep their decomposition");
            let f = report.decomposition.factors();
            let parts = HmmParts {
                p: f[1].clone(),
                a: f[0].clone(),
                b: f[2].clone(),
                pi_raw: report.decomposition.weights().clone(),
            };
            let emissions = Emissions::Series(est.densities[1].clone());
            finish_hmm(parts, emissions, est.residual, est.warnings.clone(), Some(est.classification[1].clone()), opts)
        }
    }
}

struct HmmParts {
    p: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    pi_raw: DVector<f64>,
}

fn finish_hmm(
    parts: HmmParts,
    emissions: Emissions,
    residual: f64,
    mut warnings: Vec<String>,
    classification: Option<ClassificationWeights>,
    opts: &HmmOptions,
) -> Result<HmmEstimate> {
    let r = parts.p.ncols();
    let p_pinv = linalg::pinv(&parts.p, 1e-12);
    let kt = &p_pinv * &parts.b;
    let mut transition = DMatrix::zeros(r, r);
    for j in 0..r {
        let row: Vec<f64> = kt.column(j).iter().copied().collect();
        let fixed = project_simplex(&row);
        let moved: f64 = row.iter().zip(&fixed).map(|(a, b)| (a - b).abs()).sum();
        if moved > opts.repair_bound {
            warnings.push(format!("transition row {j}: simplex repair moved {moved:.3}"));
        }
        for l in 0..r {
            transition[(j, l)] = fixed[l];
        }
    }
    let stationary = DVector::from_vec(project_simplex(parts.pi_raw.as_slice()));

    // A = PΠKΠ⁻¹  ⇒  K = Π⁻¹P⁺AΠ
    let transition_via_a = if stationary.iter().all(|&v| v > 0.0) {
        let pi = DMatrix::from_diagonal(&stationary);
        let pi_inv = DMatrix::from_diagonal(&stationary.map(|v| 1.0 / v));
        pi_inv * &p_pinv * &parts.a * pi
    } else {
        DMatrix::from_element(r, r, f64::NAN)
    };

    let bnorm = parts.b.norm();
    let consistency = (&parts.b - &parts.p * transition.transpose()).norm() / if bnorm > 0.0 { bnorm } else { 1.0 };
    let stationarity_gap = (transition.transpose() * &stationary - &stationary).amax();
    Ok(HmmEstimate {
        emissions,
        transition,
        stationary,
        a: parts.a,
        b: parts.b,
        transition_via_a,
        consistency,
        stationarity_gap,
        residual,
        warnings,
        classification,
    })
}

/// Estimates whose components can be reordered and keyed for labeling.
pub trait Relabel: Sized {
    /// Ordering key of every component computed from variable `variable`.
    fn keys(&self, variable: usize) -> Result<Vec<f64>>;
    /// Output component `j` is input component `sigma[j]`.
    fn permuted(&self, sigma: &[usize]) -> Self;
}

/// Sort components by ascending key. Returns the relabeled estimate, the
/// permutation applied, and whether two keys tie within `1e-12`.
pub fn align_labels<T: Relabel>(estimate: &T, variable: usize) -> Result<(T, Vec<usize>, bool)> {
    let keys = estimate.keys(variable)?;
    let mut sigma: Vec<usize> = (0..keys.len()).collect();
    sigma.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    let tie = sigma.windows(2).any(|w| (keys[w[1]] - keys[w[0]]).abs() <= 1e-12);
    Ok((estimate.permuted(&sigma), sigma, tie))
}

fn discrete_means(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter()
        .map(|c| c.iter().enumerate().map(|(k, p)| k as f64 * p).sum())
        .collect()
}

fn series_mean(est: &SeriesDensityEstimate) -> f64 {
    let rule = est.basis.quadrature(200);
    rule.integrate(|y| y * est.evaluate(y))
}

fn permute_vec<T: Clone>(v: &[T], sigma: &[usize]) -> Vec<T> {
    sigma.iter().map(|&k| v[k].clone()).collect()
}

impl Relabel for DiscreteMixtureEstimate {
    fn keys(&self, variable: usize) -> Result<Vec<f64>> {
        let f = self.factors.get(variable).ok_or(Error::OutOfRange {
            index: variable,
            len: self.factors.len(),
        })?;
        Ok(discrete_means(f))
    }

    fn permuted(&self, sigma: &[usize]) -> Self {
        DiscreteMixtureEstimate {
            factors: self.factors.iter().map(|f| linalg::permute_columns(f, sigma)).collect(),
            weights: DVector::from_vec(permute_vec(self.weights.as_slice(), sigma)),
            clipped: self.clipped.iter().map(|c| permute_vec(c, sigma)).collect(),
            ..self.clone()
        }
    }
}

impl Relabel for ContinuousMixtureEstimate {
    fn keys(&self, variable: usize) -> Result<Vec<f64>> {
        let d = self.densities.get(variable).ok_or(Error::OutOfRange {
            index: variable,
            len: self.densities.len(),
        })?;
        Ok(d.iter().map(series_mean).collect())
    }

    fn permuted(&self, sigma: &[usize]) -> Self {
        let densities = self
            .densities
            .iter()
            .map(|row| {
                permute_vec(row, sigma)
                    .into_iter()
                    .enumerate()
                    .map(|(j, mut e)| {
                        e.j = j;
                        e
                    })
                    .collect()
            })
            .collect();
        ContinuousMixtureEstimate {
            densities,
            weights: DVector::from_vec(permute_vec(self.weights.as_slice(), sigma)),
            cross_validation: self
                .cross_validation
                .iter()
                .map(|row| if row.is_empty() { Vec::new() } else { permute_vec(row, sigma) })
                .collect(),
            classification: self.classification.iter().map(|w| w.permuted(sigma)).collect(),
            decomposition: None,
            ..self.clone()
        }
    }
}

impl Relabel for HmmEstimate {
    /// Keys always come from the emission distribution.
    fn keys(&self, _variable: usize) -> Result<Vec<f64>> {
        Ok(match &self.emissions {
            Emissions::Discrete(p) => discrete_means(p),
            Emissions::Series(d) => d.iter().map(series_mean).collect(),
        })
    }

    fn permuted(&self, sigma: &[usize]) -> Self {
        let perm_square = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |a, b| m[(sigma[a], sigma[b])]);
        HmmEstimate {
            emissions: match &self.emissions {
                Emissions::Discrete(p) => Emissions::Discrete(linalg::permute_columns(p, sigma)),
                Emissions::Series(d) => Emissions::Series(
                    permute_vec(d, sigma)
                        .into_iter()
                        .enumerate()
                        .map(|(j, mut e)| {
                            e.j = j;
                            e
                        })
                        .collect(),
                ),
            },
            transition: perm_square(&self.transition),
            stationary: DVector::from_vec(permute_vec(self.stationary.as_slice(), sigma)),
            a: linalg::permute_columns(&self.a, sigma),
            b: linalg::permute_columns(&self.b, sigma),
            transition_via_a: perm_square(&self.transition_via_a),
            classification: self.classification.as_ref().map(|w| w.permuted(sigma)),
            ..self.clone()
        }
    }
}
