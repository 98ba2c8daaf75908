//! Seeded data generators and a Monte Carlo harness for the estimators.
//!
//! Replication `m` draws from `ChaCha8Rng` seeded with `split_seed(master, m)`,
//! where [`split_seed`] is the SplitMix64 output function applied to
//! `master + (m + 1)·γ`. Every design of a grid reuses the same seeds
//! (common random numbers), so differences across the grid are not masked
//! by independent sampling noise. Every report lists the seeds it used.
//! Replications run in parallel and are reduced in index order, so reports
//! do not depend on the thread count.
//!
//! ```
//! use triad::simulate::{draw, Design};
//!
//! let design = Design::gaussian_location(0.3);
//! let d = draw(&design, 100, 7).unwrap();
//! assert_eq!(d.sample.shape(), (100, 3));
//! assert_eq!(d, draw(&design, 100, 7).unwrap());
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::basis::{Basis, QuadratureRule};
use crate::density::{self, MomentSample};
use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::models::{self, align_labels, ContinuousOptions, DiscreteOptions, Emissions, HmmData, HmmOptions, Relabel};

/// Seed of replication `index` derived from `master`.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Gauss–Legendre integration of `f` over `[a, b]` split into `panels`.
fn integrate_panels<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let rule = Basis::legendre().quadrature(32);
    let h = (b - a) / panels as f64;
    let mut parts = Vec::with_capacity(panels);
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        parts.push(0.5 * h * rule.integrate(|x| f(mid + 0.5 * h * x)));
    }
    pairwise_sum(&parts)
}

/// One component law of one variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Component {
    Normal { mean: f64, sd: f64 },
    /// Noncentral Student t.
    StudentT { dof: f64, noncentrality: f64 },
    /// `2φ(y−μ)Φ(α(y−μ))`.
    SkewNormal { location: f64, shape: f64 },
    /// Categories `0..probs.len()`.
    Categorical { probs: Vec<f64> },
}

impl Component {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Component::Normal { mean, sd } => mean.is_finite() && *sd > 0.0 && sd.is_finite(),
            Component::StudentT { dof, noncentrality } => *dof > 0.0 && dof.is_finite() && noncentrality.is_finite(),
            Component::SkewNormal { location, shape } => location.is_finite() && shape.is_finite(),
            Component::Categorical { probs } => on_simplex(probs),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid component {self:?}")))
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Component::Categorical { .. })
    }

    /// Density, or probability mass at the nearest category for categorical laws.
    pub fn pdf(&self, y: f64) -> f64 {
        match self {
            Component::Normal { mean, sd } => Normal::new(*mean, *sd).expect("validated").pdf(y),
            Component::StudentT { dof, noncentrality } => {
                if *noncentrality == 0.0 {
                    StudentsT::new(0.0, 1.0, *dof).expect("validated").pdf(y)
                } else {
                    noncentral_t_pdf(y, *dof, *noncentrality)
                }
            }
            Component::SkewNormal { location, shape } => {
                let z = y - location;
                let n = std_normal();
                2.0 * n.pdf(z) * n.cdf(shape * z)
            }
            Component::Categorical { probs } => {
                let k = y.round();
                if k >= 0.0 && (k as usize) < probs.len() {
                    probs[k as usize]
                } else {
                    0.0
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Component::Normal { mean, .. } => *mean,
            Component::StudentT { dof, noncentrality } => {
                if *dof <= 1.0 {
                    f64::NAN
                } else {
                    noncentrality * (dof / 2.0).sqrt() * (ln_gamma((dof - 1.0) / 2.0) - ln_gamma(dof / 2.0)).exp()
                }
            }
            Component::SkewNormal { location, shape } => {
                location + shape / (1.0 + shape * shape).sqrt() * (2.0 / std::f64::consts::PI).sqrt()
            }
            Component::Categorical { probs } => probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum(),
        }
    }

    fn cdf(&self, y: f64) -> f64 {
        match self {
            Component::Normal { mean, sd } => Normal::new(*mean, *sd).expect("validated").cdf(y),
            Component::Categorical { probs } => {
                let k = y.floor();
                if k < 0.0 {
                    0.0
                } else {
                    probs.iter().take(k as usize + 1).sum()
                }
            }
            _ => {
                let lo = self.mean() - 60.0;
                if y <= lo {
                    0.0
                } else {
                    integrate_panels(|t| self.pdf(t), lo, y, 64)
                }
            }
        }
    }

    /// Quantile at probability `p`, by bisection on the distribution function.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!("probability {p} not in (0, 1)")));
        }
        if let Component::Normal { mean, sd } = self {
            return Ok(Normal::new(*mean, *sd).expect("validated").inverse_cdf(p));
        }
        if self.is_discrete() {
            return Err(Error::InvalidArgument("quantiles of categorical laws are not supported".into()));
        }
        let (mut lo, mut hi) = (self.mean() - 1.0, self.mean() + 1.0);
        while self.cdf(lo) > p {
            lo -= 2.0 * (hi - lo);
        }
        while self.cdf(hi) < p {
            hi += 2.0 * (hi - lo);
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// `∫₀^∞ √(v/d) φ(y√(v/d) − μ) χ²_d(v) dv`.
fn noncentral_t_pdf(y: f64, dof: f64, nc: f64) -> f64 {
    let chi = statrs::distribution::ChiSquared::new(dof).expect("validated");
    let n = std_normal();
    let upper = dof + 40.0 * (2.0 * dof).sqrt() + 40.0;
    integrate_panels(
        |v| {
            let s = (v / dof).sqrt();
            s * n.pdf(y * s - nc) * chi.pdf(v)
        },
        0.0,
        upper,
        48,
    )
}

fn on_simplex(p: &[f64]) -> bool {
    !p.is_empty() && p.iter().all(|v| v.is_finite() && *v >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9
}

/// Data-generating process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Design {
    /// `f_ij = φ(y − means[i][j])`.
    GaussianMixture { means: Vec<Vec<f64>>, weights: Vec<f64> },
    /// `f_ij = t_dof(y; means[i][j])`.
    TMixture {
        means: Vec<Vec<f64>>,
        weights: Vec<f64>,
        #[serde(default = "default_dof")]
        dof: f64,
    },
    /// Stationary chain with skew-normal emissions, the same in every period.
    HmmSkewNormal {
        transition: Vec<Vec<f64>>,
        locations: Vec<f64>,
        shapes: Vec<f64>,
        #[serde(default = "default_periods")]
        periods: usize,
    },
    /// Arbitrary component laws, `components[i][j]`.
    Custom { components: Vec<Vec<Component>>, weights: Vec<f64> },
}

fn default_dof() -> f64 {
    10.0
}

fn default_periods() -> usize {
    3
}

const LOCATION_MEANS: [[f64; 2]; 3] = [[0.0, 3.0], [0.0, 4.0], [0.0, 5.0]];

impl Design {
    /// Two normal components centred at `0` and at `(3, 4, 5)`.
    pub fn gaussian_location(pi1: f64) -> Design {
        Design::GaussianMixture {
            means: LOCATION_MEANS.iter().map(|r| r.to_vec()).collect(),
            weights: vec![pi1, 1.0 - pi1],
        }
    }

    /// As [`Design::gaussian_location`] with `t₁₀` components.
    pub fn t_location(pi1: f64) -> Design {
        Design::TMixture {
            means: LOCATION_MEANS.iter().map(|r| r.to_vec()).collect(),
            weights: vec![pi1, 1.0 - pi1],
            dof: 10.0,
        }
    }

    /// Two states with persistence 0.8; right-skewed emissions at −2 and
    /// left-skewed emissions at 2.
    pub fn skew_normal_hmm() -> Design {
        Design::HmmSkewNormal {
            transition: vec![vec![0.8, 0.2], vec![0.2, 0.8]],
            locations: vec![-2.0, 2.0],
            shapes: vec![5.0, -5.0],
            periods: 3,
        }
    }

    pub fn is_hmm(&self) -> bool {
        matches!(self, Design::HmmSkewNormal { .. })
    }

    pub fn q(&self) -> usize {
        match self {
            Design::GaussianMixture { means, .. } | Design::TMixture { means, .. } => means.len(),
            Design::HmmSkewNormal { periods, .. } => *periods,
            Design::Custom { components, .. } => components.len(),
        }
    }

    pub fn r(&self) -> usize {
        match self {
            Design::GaussianMixture { weights, .. } | Design::TMixture { weights, .. } | Design::Custom { weights, .. } => {
                weights.len()
            }
            Design::HmmSkewNormal { locations, .. } => locations.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let r = self.r();
        if r == 0 || self.q() == 0 {
            return bad("a design needs at least one variable and one component".into());
        }
        match self {
            Design::GaussianMixture { means, weights } | Design::TMixture { means, weights, .. } => {
                if !on_simplex(weights) {
                    return bad("mixing proportions must lie on the simplex".into());
                }
                if means.iter().any(|m| m.len() != r || m.iter().any(|v| !v.is_finite())) {
                    return bad(format!("every variable needs {r} finite means"));
                }
            }
            Design::HmmSkewNormal {
                transition,
                shapes,
                periods,
                ..
            } => {
                if shapes.len() != r || transition.len() != r || transition.iter().any(|row| row.len() != r || !on_simplex(row)) {
                    return bad("transition rows must be stochastic and match the number of states".into());
                }
                if *periods < 1 {
                    return bad("at least one period".into());
                }
            }
            Design::Custom { components, weights } => {
                if !on_simplex(weights) {
                    return bad("mixing proportions must lie on the simplex".into());
                }
                if components.iter().any(|c| c.len() != r) {
                    return bad(format!("every variable needs {r} components"));
                }
            }
        }
        if let Design::TMixture { dof, .. } = self {
            if !(*dof > 0.0) {
                return bad("degrees of freedom must be positive".into());
            }
        }
        for i in 0..self.q() {
            for j in 0..r {
                self.component(i, j).validate()?;
            }
        }
        Ok(())
    }

    /// Law of variable `i` in component (or state) `j`.
    pub fn component(&self, i: usize, j: usize) -> Component {
        match self {
            Design::GaussianMixture { means, .. } => Component::Normal {
                mean: means[i][j],
                sd: 1.0,
            },
            Design::TMixture { means, dof, .. } => Component::StudentT {
                dof: *dof,
                noncentrality: means[i][j],
            },
            Design::HmmSkewNormal { locations, shapes, .. } => Component::SkewNormal {
                location: locations[j],
                shape: shapes[j],
            },
            Design::Custom { components, .. } => components[i][j].clone(),
        }
    }

    /// Mixing proportions, or the stationary distribution of the chain.
    pub fn weights(&self) -> Result<DVector<f64>> {
        match self {
            Design::GaussianMixture { weights, .. } | Design::TMixture { weights, .. } | Design::Custom { weights, .. } => {
                Ok(DVector::from_column_slice(weights))
            }
            Design::HmmSkewNormal { transition, .. } => stationary(transition),
        }
    }

    pub fn transition(&self) -> Option<DMatrix<f64>> {
        match self {
            Design::HmmSkewNormal { transition, .. } => {
                let r = transition.len();
                Some(DMatrix::from_fn(r, r, |a, b| transition[a][b]))
            }
            _ => None,
        }
    }

    /// Number of categories of every variable, if all components are categorical.
    pub fn levels(&self) -> Option<Vec<usize>> {
        (0..self.q())
            .map(|i| {
                let mut k = None;
                for j in 0..self.r() {
                    match self.component(i, j) {
                        Component::Categorical { probs } => k = Some(k.unwrap_or(0).max(probs.len())),
                        _ => return None,
                    }
                }
                k
            })
            .collect()
    }

    fn is_continuous(&self) -> bool {
        (0..self.q()).all(|i| (0..self.r()).all(|j| !self.component(i, j).is_discrete()))
    }

    /// Component order that sorts the true laws of `variable` by their means.
    pub fn label_order(&self, variable: usize) -> Vec<usize> {
        let keys: Vec<f64> = (0..self.r()).map(|j| self.component(variable, j).mean()).collect();
        let mut order: Vec<usize> = (0..keys.len()).collect();
        order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
        order
    }
}

/// Stationary distribution of a row-stochastic matrix.
fn stationary(transition: &[Vec<f64>]) -> Result<DVector<f64>> {
    let r = transition.len();
    let mut m = DMatrix::from_fn(r, r, |a, b| transition[b][a] - if a == b { 1.0 } else { 0.0 });
    let mut rhs = DVector::zeros(r);
    for b in 0..r {
        m[(r - 1, b)] = 1.0;
    }
    rhs[r - 1] = 1.0;
    let pi = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidArgument("transition matrix has no unique stationary distribution".into()))?;
    Ok(pi.map(|v| v.max(0.0)))
}

/// A simulated sample with its latent labels. Mixtures carry one label per
/// row; chains carry one state per period.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub sample: DMatrix<f64>,
    pub latent: Vec<Vec<usize>>,
}

enum Sampler {
    Normal(f64, f64),
    T(f64, ChiSquared<f64>, f64),
    Skew(f64, f64),
    Categorical(WeightedIndex<f64>),
}

impl Sampler {
    fn new(c: &Component) -> Result<Sampler> {
        Ok(match c {
            Component::Normal { mean, sd } => Sampler::Normal(*mean, *sd),
            Component::StudentT { dof, noncentrality } => Sampler::T(
                *noncentrality,
                ChiSquared::new(*dof).map_err(|e| Error::InvalidArgument(e.to_string()))?,
                *dof,
            ),
            Component::SkewNormal { location, shape } => Sampler::Skew(*location, shape / (1.0 + shape * shape).sqrt()),
            Component::Categorical { probs } => {
                Sampler::Categorical(WeightedIndex::new(probs).map_err(|e| Error::InvalidArgument(e.to_string()))?)
            }
        })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Normal(mean, sd) => mean + sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng),
            Sampler::T(nc, chi, dof) => {
                let z: f64 = StandardNormal.sample(rng);
                let v = chi.sample(rng);
                (z + nc) / (v / dof).sqrt()
            }
            Sampler::Skew(location, delta) => {
                let u0: f64 = StandardNormal.sample(rng);
                let u1: f64 = StandardNormal.sample(rng);
                location + delta * u0.abs() + (1.0 - delta * delta).sqrt() * u1
            }
            Sampler::Categorical(w) => w.sample(rng) as f64,
        }
    }
}

fn samplers(design: &Design) -> Result<Vec<Vec<Sampler>>> {
    (0..design.q())
        .map(|i| (0..design.r()).map(|j| Sampler::new(&design.component(i, j))).collect())
        .collect()
}

fn label_index(p: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(p).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// `n` independent rows of a mixture design.
pub fn draw_mixture(design: &Design, n: usize, seed: u64) -> Result<Draw> {
    if design.is_hmm() {
        return Err(Error::InvalidArgument("use draw_hmm for a hidden Markov design".into()));
    }
    design.validate()?;
    let laws = samplers(design)?;
    let labels = label_index(design.weights()?.as_slice())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = design.q();
    let mut sample = DMatrix::zeros(n, q);
    let mut latent = Vec::with_capacity(n);
    for m in 0..n {
        let j = labels.sample(&mut rng);
        for (i, law) in laws.iter().enumerate() {
            sample[(m, i)] = law[j].sample(&mut rng);
        }
        latent.push(vec![j]);
    }
    Ok(Draw { sample, latent })
}

/// `n` independent stretches of the chain, started from its stationary law.
pub fn draw_hmm(design: &Design, n: usize, seed: u64) -> Result<Draw> {
    let Design::HmmSkewNormal { transition, .. } = design else {
        return Err(Error::InvalidArgument("draw_hmm needs a hidden Markov design".into()));
    };
    design.validate()?;
    let laws = samplers(design)?;
    let start = label_index(design.weights()?.as_slice())?;
    let steps = transition.iter().map(|row| label_index(row)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = design.q();
    let mut sample = DMatrix::zeros(n, q);
    let mut latent = Vec::with_capacity(n);
    for m in 0..n {
        let mut path = Vec::with_capacity(q);
        let mut z = start.sample(&mut rng);
        for t in 0..q {
            if t > 0 {
                z = steps[z].sample(&mut rng);
            }
            sample[(m, t)] = laws[t][z].sample(&mut rng);
            path.push(z);
        }
        latent.push(path);
    }
    Ok(Draw { sample, latent })
}

pub fn draw(design: &Design, n: usize, seed: u64) -> Result<Draw> {
    if design.is_hmm() {
        draw_hmm(design, n, seed)
    } else {
        draw_mixture(design, n, seed)
    }
}

/// Replication settings shared by all experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessSettings {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    /// Confidence level of the pointwise intervals.
    pub level: f64,
    /// Entrywise tolerance for counting accurate transition estimates.
    pub transition_tol: f64,
    /// Gauss–Hermite nodes for integrated squared errors.
    pub quadrature_nodes: usize,
}

impl Default for HarnessSettings {
    fn default() -> Self {
        HarnessSettings {
            n: 500,
            reps: 100,
            seed: 0,
            level: 0.95,
            transition_tol: 0.05,
            quadrature_nodes: 200,
        }
    }
}

/// One tidy output row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub design: usize,
    pub pi1: Option<f64>,
    pub variable: Option<usize>,
    pub component: Option<usize>,
    /// Evaluation point, or category index for discrete parameters.
    pub point: Option<f64>,
    /// Probability level of the evaluation point.
    pub quantile: Option<f64>,
    pub metric: String,
    pub value: f64,
    /// Monte Carlo standard error of `value`.
    pub mc_se: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnessReport {
    pub experiment: String,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    /// Per design, the seed of every replication.
    pub seeds: Vec<Vec<u64>>,
    /// Per design, replications that produced an estimate.
    pub successes: Vec<usize>,
    pub failures: usize,
    pub failure_rate: f64,
    /// First few failure messages.
    pub failure_messages: Vec<String>,
    pub cells: Vec<Cell>,
}

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or(String::new(), |x| x.to_string())
}

impl HarnessReport {
    pub const CSV_HEADER: &'static str = "design,pi1,variable,component,point,quantile,metric,value,mc_se";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                c.design,
                opt(&c.pi1),
                opt(&c.variable),
                opt(&c.component),
                opt(&c.point),
                opt(&c.quantile),
                c.metric,
                c.value,
                opt(&c.mc_se)
            ));
        }
        out
    }

    /// Cells with the given metric, in report order.
    pub fn metric<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Cell> + 'a {
        self.cells.iter().filter(move |c| c.metric == name)
    }

    /// The cell for `metric` at `(design, variable, component)`, ignoring points.
    pub fn find(&self, name: &str, design: usize, variable: Option<usize>, component: Option<usize>) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.metric == name && c.design == design && c.variable == variable && c.component == component)
    }
}

const MAX_MESSAGES: usize = 20;

struct Runs<T> {
    seeds: Vec<Vec<u64>>,
    /// Successful outcomes per design, in replication order.
    ok: Vec<Vec<T>>,
    failures: usize,
    messages: Vec<String>,
}

fn replicate<T, F>(designs: usize, settings: &HarnessSettings, run: F) -> Result<Runs<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    if settings.reps < 2 {
        return Err(Error::InvalidArgument("at least two replications are needed".into()));
    }
    let shared: Vec<u64> = (0..settings.reps as u64).map(|m| split_seed(settings.seed, m)).collect();
    let seeds = vec![shared; designs];
    let jobs: Vec<(usize, u64)> = seeds
        .iter()
        .enumerate()
        .flat_map(|(d, s)| s.iter().map(move |&seed| (d, seed)))
        .collect();
    let outcomes: Vec<Result<T>> = jobs.par_iter().map(|&(d, seed)| run(d, seed)).collect();
    let mut ok: Vec<Vec<T>> = (0..designs).map(|_| Vec::new()).collect();
    let mut failures = 0;
    let mut messages = Vec::new();
    for ((d, seed), outcome) in jobs.into_iter().zip(outcomes) {
        match outcome {
            Ok(t) => ok[d].push(t),
            Err(e) => {
                failures += 1;
                if messages.len() < MAX_MESSAGES {
                    messages.push(format!("design {d}, seed {seed}: {e}"));
                }
            }
        }
    }
    Ok(Runs {
        seeds,
        ok,
        failures,
        messages,
    })
}

impl<T> Runs<T> {
    fn report(self, experiment: &str, settings: &HarnessSettings, cells: Vec<Cell>) -> HarnessReport {
        let total = self.seeds.iter().map(Vec::len).sum::<usize>().max(1);
        HarnessReport {
            experiment: experiment.into(),
            n: settings.n,
            reps: settings.reps,
            seed: settings.seed,
            successes: self.ok.iter().map(Vec::len).collect(),
            failures: self.failures,
            failure_rate: self.failures as f64 / total as f64,
            failure_messages: self.messages,
            seeds: self.seeds,
            cells,
        }
    }
}

/// Mean and its standard error.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let var = if xs.len() > 1 { pairwise_sum(&dev) / (n - 1.0) } else { f64::NAN };
    (mean, (var / n).sqrt())
}

/// Standard deviation with divisor `n`.
fn sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    (pairwise_sum(&dev) / n).sqrt()
}

/// Inverse of a permutation.
fn inverse(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (rank, &t) in order.iter().enumerate() {
        inv[t] = rank;
    }
    inv
}

/// Relabel an estimate so that its component `t` estimates true component `t`.
fn to_truth_labels<T: Relabel>(est: &T, variable: usize, truth_order: &[usize]) -> Result<T> {
    let (aligned, _, _) = align_labels(est, variable)?;
    Ok(aligned.permuted(&inverse(truth_order)))
}

struct RmiseRep {
    /// `q × r`, row-major by variable.
    ise: Vec<f64>,
    weights: Vec<f64>,
}

/// Integrated squared error of the series density estimator for every
/// variable and component, for each design over `settings.reps`
/// replications of size `settings.n`. Components are labeled by the order
/// of their means for variable 0.
pub fn run_rmise(designs: &[Design], settings: &HarnessSettings, opts: &ContinuousOptions) -> Result<HarnessReport> {
    for d in designs {
        d.validate()?;
        if d.is_hmm() || !d.is_continuous() {
            return Err(Error::InvalidArgument("the RMISE experiment needs continuous mixture designs".into()));
        }
    }
    let rule: Arc<QuadratureRule> = Basis::hermite().quadrature(settings.quadrature_nodes);
    let truth: Vec<Vec<Vec<f64>>> = designs
        .iter()
        .map(|d| {
            (0..d.q())
                .flat_map(|i| (0..d.r()).map(move |j| (i, j)))
                .map(|(i, j)| {
                    let c = d.component(i, j);
                    rule.nodes.iter().map(|&y| c.pdf(y)).collect()
                })
                .collect()
        })
        .collect();
    let orders: Vec<Vec<usize>> = designs.iter().map(|d| d.label_order(0)).collect();

    let runs = replicate(designs.len(), settings, |d, seed| {
        let design = &designs[d];
        let data = draw_mixture(design, settings.n, seed)?;
        let est = models::fit_continuous_mixture(&data.sample, design.r(), opts)?;
        let est = to_truth_labels(&est, 0, &orders[d])?;
        let r = design.r();
        let mut ise = Vec::with_capacity(design.q() * r);
        for i in 0..design.q() {
            for j in 0..r {
                let f = &truth[d][i * r + j];
                let fhat = &est.densities[i][j];
                let terms: Vec<f64> = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .zip(f)
                    .map(|((&y, &w), &fy)| w * (fhat.evaluate(y) - fy).powi(2))
                    .collect();
                ise.push(pairwise_sum(&terms));
            }
        }
        Ok(RmiseRep {
            ise,
            weights: est.weights.iter().copied().collect(),
        })
    })?;

    let mut cells = Vec::new();
    for (d, design) in designs.iter().enumerate() {
        let reps = &runs.ok[d];
        if reps.is_empty() {
            continue;
        }
        let pi = design.weights()?;
        let pi1 = Some(pi[0]);
        let r = design.r();
        for i in 0..design.q() {
            for j in 0..r {
                let xs: Vec<f64> = reps.iter().map(|rep| rep.ise[i * r + j]).collect();
                let (mise, se) = mean_se(&xs);
                let rmise = mise.sqrt();
                let base = Cell {
                    design: d,
                    pi1,
                    variable: Some(i),
                    component: Some(j),
                    point: None,
                    quantile: None,
                    metric: "mise".into(),
                    value: mise,
                    mc_se: Some(se),
                };
                cells.push(Cell {
                    metric: "rmise".into(),
                    value: rmise,
                    mc_se: Some(se / (2.0 * rmise)),
                    ..base.clone()
                });
                cells.push(base);
            }
        }
        for j in 0..r {
            let errs: Vec<f64> = reps.iter().map(|rep| rep.weights[j] - pi[j]).collect();
            let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
            let (bias, se) = mean_se(&errs);
            let base = Cell {
                design: d,
                pi1,
                variable: None,
                component: Some(j),
                point: None,
                quantile: None,
                metric: "weight_bias".into(),
                value: bias,
                mc_se: Some(se),
            };
            cells.push(Cell {
                metric: "weight_rmse".into(),
                value: mean_se(&sq).0.sqrt(),
                mc_se: None,
                ..base.clone()
            });
            cells.push(base);
        }
    }
    Ok(runs.report("rmise", settings, cells))
}

struct CoverageRep {
    /// Per component and decile: estimate, standard error, cover flag, infeasible estimate.
    fhat: Vec<Vec<f64>>,
    se: Vec<Vec<f64>>,
    covered: Vec<Vec<bool>>,
    infeasible: Vec<Vec<f64>>,
    kappa: Vec<usize>,
    transition: DMatrix<f64>,
}

pub const DECILES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Pointwise confidence intervals for the emission densities of a hidden
/// Markov design at the deciles of each true emission law, together with
/// transition-matrix accuracy. States are labeled by emission mean.
pub fn run_coverage(design: &Design, settings: &HarnessSettings, opts: &HmmOptions) -> Result<HarnessReport> {
    let Some(k_true) = design.transition() else {
        return Err(Error::InvalidArgument("the coverage experiment needs a hidden Markov design".into()));
    };
    design.validate()?;
    if design.q() != 3 {
        return Err(Error::InvalidArgument("the coverage experiment needs three periods".into()));
    }
    let r = design.r();
    let z = density::z_value(settings.level)?;
    let laws: Vec<Component> = (0..r).map(|j| design.component(1, j)).collect();
    let points: Vec<Vec<f64>> = laws
        .iter()
        .map(|c| DECILES.iter().map(|&p| c.quantile(p)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let truth: Vec<Vec<f64>> = laws
        .iter()
        .zip(&points)
        .map(|(c, ys)| ys.iter().map(|&y| c.pdf(y)).collect())
        .collect();
    let order = design.label_order(1);
    let sqrt_n = (settings.n as f64).sqrt();
    let basis = opts.continuous.basis;
    let kappas = opts.continuous.kappas.clone().unwrap_or_else(|| vec![density::DEFAULT_KAPPA; 3]);

    let runs = replicate(1, settings, |_, seed| {
        let data = draw_hmm(design, settings.n, seed)?;
        let est = models::fit_hmm(HmmData::Sample(&data.sample), r, opts)?;
        let est = to_truth_labels(&est, 1, &order)?;
        let Emissions::Series(densities) = &est.emissions else {
            unreachable!("continuous data gives series emissions")
        };
        let weights = est.classification.as_ref().expect("continuous fits keep their weights");
        let ms = MomentSample::new(&data.sample, basis, &kappas)?;
        let y2: Vec<f64> = data.sample.column(1).iter().copied().collect();
        let mut rep = CoverageRep {
            fhat: Vec::new(),
            se: Vec::new(),
            covered: Vec::new(),
            infeasible: Vec::new(),
            kappa: Vec::new(),
            transition: est.transition.clone(),
        };
        for t in 0..r {
            let dens = &densities[t];
            let own: Vec<f64> = y2
                .iter()
                .zip(&data.latent)
                .filter(|(_, path)| path[1] == t)
                .map(|(&y, _)| y)
                .collect();
            let oracle = if own.is_empty() {
                vec![0.0; dens.kappa]
            } else {
                basis.project_sample(&own, dens.kappa)?.iter().copied().collect()
            };
            let (mut f, mut s, mut c, mut inf) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for (p, &y) in points[t].iter().enumerate() {
                let fy = dens.evaluate(y);
                let se = density::pointwise_se(weights, &ms, dens, y)? / sqrt_n;
                f.push(fy);
                s.push(se);
                c.push((fy - truth[t][p]).abs() <= z * se);
                inf.push(basis.series(&oracle, y));
            }
            rep.fhat.push(f);
            rep.se.push(s);
            rep.covered.push(c);
            rep.infeasible.push(inf);
            rep.kappa.push(dens.kappa);
        }
        Ok(rep)
    })?;

    let reps = &runs.ok[0];
    let mut cells = Vec::new();
    if !reps.is_empty() {
        let count = reps.len() as f64;
        for t in 0..r {
            for (p, &prob) in DECILES.iter().enumerate() {
                let cell = |metric: &str, value: f64, mc_se: Option<f64>| Cell {
                    design: 0,
                    pi1: None,
                    variable: Some(1),
                    component: Some(t),
                    point: Some(points[t][p]),
                    quantile: Some(prob),
                    metric: metric.into(),
                    value,
                    mc_se,
                };
                let f: Vec<f64> = reps.iter().map(|rep| rep.fhat[t][p]).collect();
                let se: Vec<f64> = reps.iter().map(|rep| rep.se[t][p]).collect();
                let inf: Vec<f64> = reps.iter().map(|rep| rep.infeasible[t][p]).collect();
                let cover = reps.iter().filter(|rep| rep.covered[t][p]).count() as f64 / count;
                let spread = sd(&f);
                let (mean_f, mean_f_se) = mean_se(&f);
                let (mean_s, mean_s_se) = mean_se(&se);
                let oracle_cover = f.iter().filter(|&&v| (v - truth[t][p]).abs() <= z * spread).count() as f64 / count;
                cells.push(cell("truth", truth[t][p], None));
                cells.push(cell("mean_fhat", mean_f, Some(mean_f_se)));
                cells.push(cell("infeasible_mean", mean_se(&inf).0, Some(mean_se(&inf).1)));
                cells.push(cell("coverage", cover, Some((cover * (1.0 - cover) / count).sqrt())));
                cells.push(cell("oracle_coverage", oracle_cover, None));
                cells.push(cell("mean_se", mean_s, Some(mean_s_se)));
                cells.push(cell("sd", spread, None));
                cells.push(cell("se_ratio", mean_s / spread, None));
            }
            let kappas: Vec<f64> = reps.iter().map(|rep| rep.kappa[t] as f64).collect();
            let (mk, mk_se) = mean_se(&kappas);
            cells.push(Cell {
                design: 0,
                pi1: None,
                variable: Some(1),
                component: Some(t),
                point: None,
                quantile: None,
                metric: "kappa_mean".into(),
                value: mk,
                mc_se: Some(mk_se),
            });
        }
        transition_cells(&mut cells, reps, &k_true, settings.transition_tol);
    }
    Ok(runs.report("coverage", settings, cells))
}

fn transition_cells(cells: &mut Vec<Cell>, reps: &[CoverageRep], k_true: &DMatrix<f64>, tol: f64) {
    let r = k_true.nrows();
    for a in 0..r {
        for b in 0..r {
            let errs: Vec<f64> = reps.iter().map(|rep| rep.transition[(a, b)] - k_true[(a, b)]).collect();
            let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
            let (bias, se) = mean_se(&errs);
            let base = Cell {
                design: 0,
                pi1: None,
                variable: Some(a),
                component: Some(b),
                point: None,
                quantile: None,
                metric: "transition_bias".into(),
                value: bias,
                mc_se: Some(se),
            };
            cells.push(Cell {
                metric: "transition_rmse".into(),
                value: mean_se(&sq).0.sqrt(),
                mc_se: None,
                ..base.clone()
            });
            cells.push(base);
        }
    }
    let within = reps.iter().filter(|rep| (&rep.transition - k_true).amax() <= tol).count() as f64 / reps.len() as f64;
    cells.push(Cell {
        design: 0,
        pi1: None,
        variable: None,
        component: None,
        point: Some(tol),
        quantile: None,
        metric: "transition_within".into(),
        value: within,
        mc_se: Some((within * (1.0 - within) / reps.len() as f64).sqrt()),
    });
}

/// Bias and root mean squared error of every parameter of a discrete
/// mixture design, plus the pooled error over all parameters (metric
/// `rmse` with no variable or component). Components are labeled by the
/// mean category of variable 0.
pub fn run_discrete(design: &Design, settings: &HarnessSettings, opts: &DiscreteOptions) -> Result<HarnessReport> {
    design.validate()?;
    let Some(levels) = design.levels() else {
        return Err(Error::InvalidArgument("the discrete experiment needs categorical components".into()));
    };
    if design.is_hmm() {
        return Err(Error::InvalidArgument("the discrete experiment needs a mixture design".into()));
    }
    let q = design.q();
    let r = design.r();
    let pi = design.weights()?;
    // parameter vector: factor entries by (i, j, k), then weights
    let mut truth = Vec::new();
    let mut labels = Vec::new();
    for (i, &l) in levels.iter().enumerate() {
        for j in 0..r {
            for k in 0..l {
                truth.push(design.component(i, j).pdf(k as f64));
                labels.push((Some(i), j, Some(k as f64), "factor"));
            }
        }
    }
    for j in 0..r {
        truth.push(pi[j]);
        labels.push((None, j, None, "weight"));
    }
    let order = design.label_order(0);

    let runs = replicate(1, settings, |_, seed| {
        let data = draw_mixture(design, settings.n, seed)?;
        let rows: Vec<Vec<usize>> = data
            .sample
            .row_iter()
            .map(|row| row.iter().map(|&v| v as usize).collect())
            .collect();
        let table = models::count_table(&rows, &levels)?;
        let est = models::fit_discrete_mixture(&table, r, opts)?;
        let est = to_truth_labels(&est, 0, &order)?;
        let mut theta = Vec::with_capacity(truth.len());
        for i in 0..q {
            for j in 0..r {
                theta.extend(est.factors[i].column(j).iter().copied());
            }
        }
        theta.extend(est.weights.iter().copied());
        Ok(theta)
    })?;

    let reps = &runs.ok[0];
    let mut cells = Vec::new();
    if !reps.is_empty() {
        let mut pooled = Vec::with_capacity(reps.len());
        for rep in reps {
            let sq: Vec<f64> = rep.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).collect();
            pooled.push(pairwise_sum(&sq) / sq.len() as f64);
        }
        let (mse, mse_se) = mean_se(&pooled);
        cells.push(Cell {
            design: 0,
            pi1: None,
            variable: None,
            component: None,
            point: None,
            quantile: None,
            metric: "rmse".into(),
            value: mse.sqrt(),
            mc_se: Some(mse_se / (2.0 * mse.sqrt())),
        });
        for (p, &(variable, j, point, kind)) in labels.iter().enumerate() {
            let errs: Vec<f64> = reps.iter().map(|rep| rep[p] - truth[p]).collect();
            let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
            let (bias, se) = mean_se(&errs);
            let base = Cell {
                design: 0,
                pi1: None,
                variable,
                component: Some(j),
                point,
                quantile: None,
                metric: format!("{kind}_bias"),
                value: bias,
                mc_se: Some(se),
            };
            cells.push(Cell {
                metric: format!("{kind}_rmse"),
                value: mean_se(&sq).0.sqrt(),
                mc_se: None,
                ..base.clone()
            });
            cells.push(base);
        }
    }
    Ok(runs.report("discrete", settings, cells))
}
