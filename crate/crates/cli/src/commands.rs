use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;
use triad::basis::Basis;
use triad::decompose::{recover_all_factors, DecomposeOptions};
use triad::density::{self, MomentSample, SeriesDensityEstimate};
use triad::jointdiag::{self, JointDiagOptions, JointDiagProblem};
use triad::models::{
    align_labels, fit_continuous_mixture, fit_discrete_mixture, fit_hmm, ContinuousOptions, DiscreteOptions, Emissions,
    HmmData, HmmOptions, Truncation,
};
use triad::multiway::{matrix_from_csv, matrix_to_csv, ContingencyTable, MultiwayArray, QadDecomposition};
use triad::simulate::{self, Design, HarnessSettings};

use crate::config::Knobs;
use crate::error::CliError;
use crate::io::{read_json, read_text, to_json, versioned_csv, Outputs};

fn jointdiag_options(k: &Knobs, seed: u64) -> JointDiagOptions {
    let d = JointDiagOptions::default();
    JointDiagOptions {
        tol: k.tol.unwrap_or(d.tol),
        max_sweeps: k.max_sweeps.unwrap_or(d.max_sweeps),
        restarts: k.restarts.unwrap_or(d.restarts),
        seed,
        ..d
    }
}

fn decompose_options(k: &Knobs, seed: u64) -> DecomposeOptions {
    let d = DecomposeOptions::default();
    DecomposeOptions {
        rank_threshold: k.rank_threshold.unwrap_or(d.rank_threshold),
        jointdiag: jointdiag_options(k, seed),
        scale: k.scale.unwrap_or(d.scale),
        ..d
    }
}

fn continuous_options(k: &Knobs, seed: u64, q: usize) -> ContinuousOptions {
    let d = ContinuousOptions::default();
    ContinuousOptions {
        basis: k.basis.map_or(d.basis, Basis::new),
        kappas: Some(vec![k.kappa.unwrap_or(density::DEFAULT_KAPPA); q]),
        truncation: match k.kappa_fixed {
            Some(f) => Truncation::Fixed(f),
            None => Truncation::CrossValidate {
                max: k.kappa_max.unwrap_or(density::DEFAULT_KAPPA_MAX),
            },
        },
        decompose: decompose_options(k, seed),
        ..d
    }
}

fn hmm_options(k: &Knobs, seed: u64) -> HmmOptions {
    HmmOptions {
        decompose: decompose_options(k, seed),
        continuous: continuous_options(k, seed, 3),
        ..HmmOptions::default()
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ArrayInput {
    Array(MultiwayArray),
    Decomposition(QadDecomposition),
}

pub fn decompose(k: &Knobs) -> Result<(), CliError> {
    let input = k.input()?;
    let output = k.output()?;
    let r = k.rank()?;
    let opts = decompose_options(k, k.seed()?);
    let report = match read_json::<ArrayInput>(input)? {
        ArrayInput::Array(x) => recover_all_factors(&x, &ContingencyTable(&x), r, &opts)?,
        ArrayInput::Decomposition(d) => recover_all_factors(&d.compose(), &d, r, &opts)?,
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let mut out = Outputs::default();
    out.add(output, to_json(&report)?);
    out.commit()
}

pub fn jadiag(k: &Knobs) -> Result<(), CliError> {
    let problem: JointDiagProblem = read_json(k.input()?)?;
    let output = k.output()?;
    let result = jointdiag::solve(&problem, &jointdiag_options(k, k.seed()?))?;
    let mut out = Outputs::default();
    out.add(output, to_json(&result)?);
    out.commit()
}

fn read_sample(path: &Path) -> Result<DMatrix<f64>, CliError> {
    matrix_from_csv(&read_text(path)?).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn is_table(k: &Knobs, path: &Path) -> bool {
    k.discrete
        .unwrap_or_else(|| path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")))
}

/// Long CSV of every density on a 201-point grid spanning the sample.
fn density_grid(
    sample: &DMatrix<f64>,
    ms: &MomentSample,
    cells: &[(usize, &SeriesDensityEstimate, &density::ClassificationWeights)],
    level: f64,
) -> Result<String, CliError> {
    let mut body = String::from("variable,component,y,fhat,se,lo,hi\n");
    let z = density::z_value(level)?;
    let sqrt_n = (ms.n() as f64).sqrt();
    for &(i, est, w) in cells {
        let col = sample.column(i);
        let (lo, hi) = (col.min(), col.max());
        for g in 0..=200 {
            let y = lo + (hi - lo) * g as f64 / 200.0;
            let f = est.evaluate(y);
            let se = density::pointwise_se(w, ms, est, y)?;
            let half = z * se / sqrt_n;
            body.push_str(&format!("{i},{},{y},{f},{se},{},{}\n", est.j, f - half, f + half));
        }
    }
    Ok(versioned_csv(&body))
}

pub fn fit_mixture(k: &Knobs) -> Result<(), CliError> {
    let input = k.input()?;
    let output = k.output()?;
    let r = k.rank()?;
    let seed = k.seed()?;
    let mut out = Outputs::default();
    if is_table(k, input) {
        let table: MultiwayArray = read_json(input)?;
        let opts = DiscreteOptions {
            decompose: decompose_options(k, seed),
            ..DiscreteOptions::default()
        };
        let est = fit_discrete_mixture(&table, r, &opts)?;
        let (est, _, tie) = align_labels(&est, 0)?;
        if tie {
            eprintln!("warning: components tie on the labeling key");
        }
        for w in &est.warnings {
            eprintln!("warning: {w}");
        }
        out.add(output, to_json(&est)?);
    } else {
        let sample = read_sample(input)?;
        let opts = continuous_options(k, seed, sample.ncols());
        let est = fit_continuous_mixture(&sample, r, &opts)?;
        let (est, _, tie) = align_labels(&est, 0)?;
        if tie {
            eprintln!("warning: components tie on the labeling key");
        }
        for w in &est.warnings {
            eprintln!("warning: {w}");
        }
        if let Some(csv) = &k.csv {
            let kappas = opts.kappas.clone().unwrap_or_default();
            let ms = MomentSample::new(&sample, opts.basis, &kappas)?;
            let cells: Vec<_> = est
                .densities
                .iter()
                .enumerate()
                .flat_map(|(i, row)| row.iter().map(move |e| (i, e)))
                .map(|(i, e)| (i, e, &est.classification[i]))
                .collect();
            out.add(csv, density_grid(&sample, &ms, &cells, k.level.unwrap_or(0.95))?);
        }
        out.add(output, to_json(&est)?);
    }
    out.commit()
}

pub fn fit_hmm_cmd(k: &Knobs) -> Result<(), CliError> {
    let input = k.input()?;
    let output = k.output()?;
    let r = k.rank()?;
    let opts = hmm_options(k, k.seed()?);
    let mut out = Outputs::default();
    let est = if is_table(k, input) {
        let table: MultiwayArray = read_json(input)?;
        fit_hmm(HmmData::Table(&table), r, &opts)?
    } else {
        let sample = read_sample(input)?;
        let est = fit_hmm(HmmData::Sample(&sample), r, &opts)?;
        let (est, _, _) = align_labels(&est, 1)?;
        if let (Some(csv), Emissions::Series(d), Some(w)) = (&k.csv, &est.emissions, &est.classification) {
            let kappas = opts.continuous.kappas.clone().unwrap_or_default();
            let ms = MomentSample::new(&sample, opts.continuous.basis, &kappas)?;
            let cells: Vec<_> = d.iter().map(|e| (1, e, w)).collect();
            out.add(csv, density_grid(&sample, &ms, &cells, k.level.unwrap_or(0.95))?);
        }
        est
    };
    let (est, _, tie) = align_labels(&est, 1)?;
    if tie {
        eprintln!("warning: states tie on the labeling key");
    }
    for w in &est.warnings {
        eprintln!("warning: {w}");
    }
    out.add(output, to_json(&est)?);
    out.commit()
}

fn preset(name: &str, pi1: f64) -> Result<Design, CliError> {
    match name {
        "gaussian" => Ok(Design::gaussian_location(pi1)),
        "t" => Ok(Design::t_location(pi1)),
        "hmm" => Ok(Design::skew_normal_hmm()),
        other => Err(CliError::Usage(format!("unknown preset `{other}` (gaussian, t, hmm)"))),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DesignInput {
    One(Design),
    Many(Vec<Design>),
}

fn designs(k: &Knobs, default_preset: &str, default_pi1: &[f64]) -> Result<Vec<Design>, CliError> {
    if let Some(path) = &k.design {
        return Ok(match read_json::<DesignInput>(path)? {
            DesignInput::One(d) => vec![d],
            DesignInput::Many(ds) => ds,
        });
    }
    let name = k.preset.as_deref().unwrap_or(default_preset);
    let pis = k.pi1.clone().unwrap_or_else(|| default_pi1.to_vec());
    if name == "hmm" {
        return Ok(vec![Design::skew_normal_hmm()]);
    }
    pis.iter().map(|&p| preset(name, p)).collect()
}

fn settings(k: &Knobs, n: usize) -> Result<HarnessSettings, CliError> {
    let d = HarnessSettings::default();
    Ok(HarnessSettings {
        n: k.n.unwrap_or(n),
        reps: k.reps.unwrap_or(d.reps),
        seed: k.seed()?,
        level: k.level.unwrap_or(d.level),
        ..d
    })
}

fn write_report(k: &Knobs, report: &simulate::HarnessReport) -> Result<(), CliError> {
    eprintln!(
        "{} replications, {} failed ({:.1}%)",
        report.seeds.iter().map(Vec::len).sum::<usize>(),
        report.failures,
        100.0 * report.failure_rate
    );
    let mut out = Outputs::default();
    out.add(k.output()?, to_json(report)?);
    if let Some(csv) = &k.csv {
        out.add(csv, versioned_csv(&report.to_csv()));
    }
    out.commit()
}

pub fn experiment_rmise(k: &Knobs) -> Result<(), CliError> {
    k.output()?;
    let ds = designs(k, "gaussian", &[0.2, 0.3, 0.4, 0.5])?;
    let q = ds.first().map_or(3, Design::q);
    let report = simulate::run_rmise(&ds, &settings(k, 500)?, &continuous_options(k, k.seed()?, q))?;
    write_report(k, &report)
}

pub fn experiment_coverage(k: &Knobs) -> Result<(), CliError> {
    k.output()?;
    let ds = designs(k, "hmm", &[])?;
    let [design] = ds.as_slice() else {
        return Err(CliError::Usage("the coverage experiment takes exactly one design".into()));
    };
    let report = simulate::run_coverage(design, &settings(k, 5000)?, &hmm_options(k, k.seed()?))?;
    write_report(k, &report)
}

pub fn gen(k: &Knobs) -> Result<(), CliError> {
    let output = k.output()?;
    let ds = designs(k, "gaussian", &[0.5])?;
    let [design] = ds.as_slice() else {
        return Err(CliError::Usage("gen takes exactly one design".into()));
    };
    let data = simulate::draw(design, k.n.unwrap_or(500), k.seed()?)?;
    let mut out = Outputs::default();
    out.add(output, versioned_csv(&matrix_to_csv(&data.sample)));
    if let Some(csv) = &k.csv {
        let width = data.latent.first().map_or(0, Vec::len);
        let latent = DMatrix::from_fn(data.latent.len(), width, |m, t| data.latent[m][t] as f64);
        out.add(csv, versioned_csv(&matrix_to_csv(&latent)));
    }
    out.commit()
}
