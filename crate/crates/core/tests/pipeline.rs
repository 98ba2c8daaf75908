//! End-to-end runs from simulated data to fitted models.

use nalgebra::DMatrix;

use triad::models::{
    align_labels, count_table, fit_continuous_mixture, fit_discrete_mixture, fit_hmm, ContinuousOptions,
    DiscreteOptions, Emissions, HmmData, HmmOptions, Truncation,
};
use triad::multiway::{matrix_from_csv, matrix_to_csv};
use triad::simulate::{draw, Component, Design};

fn categorical_design() -> Design {
    let cat = |p: &[f64]| Component::Categorical { probs: p.to_vec() };
    Design::Custom {
        components: vec![
            vec![cat(&[0.6, 0.3, 0.1]), cat(&[0.1, 0.3, 0.6])],
            vec![cat(&[0.5, 0.4, 0.1]), cat(&[0.2, 0.2, 0.6])],
            vec![cat(&[0.7, 0.2, 0.1]), cat(&[0.1, 0.2, 0.7])],
        ],
        weights: vec![0.35, 0.65],
    }
}

#[test]
fn discrete_sample_to_estimate() {
    let design = categorical_design();
    let data = draw(&design, 40_000, 17).unwrap();
    let rows: Vec<Vec<usize>> = data
        .sample
        .row_iter()
        .map(|r| r.iter().map(|&v| v as usize).collect())
        .collect();
    let table = count_table(&rows, &[3, 3, 3]).unwrap();
    let est = fit_discrete_mixture(&table, 2, &DiscreteOptions::default()).unwrap();
    let (est, _, tie) = align_labels(&est, 0).unwrap();
    assert!(!tie);
    assert!((est.weights[0] - 0.35).abs() < 0.03, "{}", est.weights);
    let truth0 = [0.6, 0.3, 0.1];
    for (c, t) in truth0.iter().enumerate() {
        assert!((est.factors[0][(c, 0)] - t).abs() < 0.04, "{}", est.factors[0]);
    }
}

#[test]
fn continuous_sample_through_csv() {
    let design = Design::gaussian_location(0.4);
    let data = draw(&design, 3000, 23).unwrap();
    let sample = matrix_from_csv(&matrix_to_csv(&data.sample)).unwrap();
    assert_eq!(sample, data.sample);

    let opts = ContinuousOptions {
        truncation: Truncation::Fixed(8),
        ..ContinuousOptions::default()
    };
    let est = fit_continuous_mixture(&sample, 2, &opts).unwrap();
    let (est, _, _) = align_labels(&est, 0).unwrap();
    assert!((est.weights[0] - 0.4).abs() < 0.06, "{}", est.weights);
    // component 0 is centered at zero on every variable
    for i in 0..3 {
        let f = &est.densities[i][0];
        assert_eq!(f.kappa, 8);
        assert!(f.evaluate(0.0) > f.evaluate(2.5));
    }
}

#[test]
fn hmm_sample_recovers_transition() {
    let design = Design::skew_normal_hmm();
    let truth = design.transition().unwrap();
    let data = draw(&design, 20_000, 29).unwrap();
    let est = fit_hmm(HmmData::Sample(&data.sample), 2, &HmmOptions::default()).unwrap();
    let (est, _, _) = align_labels(&est, 1).unwrap();
    let order = design.label_order(1);
    let k = DMatrix::from_fn(2, 2, |a, b| truth[(order[a], order[b])]);
    assert!((&est.transition - &k).amax() < 0.05, "{} vs {}", est.transition, k);
    assert!(est.consistency < 0.2, "{}", est.consistency);
    let Emissions::Series(d) = &est.emissions else {
        panic!("continuous data gives series emissions");
    };
    assert_eq!(d.len(), 2);
}
