use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;
use triad::basis::BasisKind;
use triad::decompose::ScaleConvention;

use crate::error::CliError;

/// Every setting a subcommand may read. A JSON config file uses the same
/// names as the flags; flags win over the file, the file over defaults.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Knobs {
    /// Input file (JSON array, decomposition, problem, table or CSV sample).
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Main output file.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Additional CSV output (grid, tidy report or latent labels).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Master seed; falls back to TRIAD_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Number of components or hidden states.
    #[arg(long, short)]
    pub rank: Option<usize>,
    /// Series basis: hermite or legendre.
    #[arg(long)]
    pub basis: Option<BasisKind>,
    /// Moment truncation per variable.
    #[arg(long)]
    pub kappa: Option<usize>,
    /// Largest truncation tried by cross-validation.
    #[arg(long)]
    pub kappa_max: Option<usize>,
    /// Fixed density truncation instead of cross-validation.
    #[arg(long)]
    pub kappa_fixed: Option<usize>,
    /// Factor scale: identified, unit-norm or sum-to-one.
    #[arg(long)]
    pub scale: Option<ScaleConvention>,
    /// Smallest accepted singular-value ratio of the whitened submodel.
    #[arg(long)]
    pub rank_threshold: Option<f64>,
    /// Relative decrease that stops the joint diagonalizer.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Sweep limit of the joint diagonalizer.
    #[arg(long)]
    pub max_sweeps: Option<usize>,
    /// Random restarts of the joint diagonalizer.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Monte Carlo replications.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Sample size.
    #[arg(long, short)]
    pub n: Option<usize>,
    /// Confidence level of pointwise intervals.
    #[arg(long)]
    pub level: Option<f64>,
    /// Design JSON file (a design, or a list of designs for rmise).
    #[arg(long)]
    pub design: Option<PathBuf>,
    /// Built-in design: gaussian, t or hmm.
    #[arg(long)]
    pub preset: Option<String>,
    /// Mixing proportions of the first component for preset grids.
    #[arg(long, value_delimiter = ',')]
    pub pi1: Option<Vec<f64>>,
    /// Treat the input as a table of counts.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub discrete: Option<bool>,
}

macro_rules! prefer {
    ($a:ident, $b:ident, $($f:ident),*) => {
        Knobs { $($f: $a.$f.or($b.$f)),* }
    };
}

impl Knobs {
    /// Fill every unset field from `fallback`.
    pub fn or(self, fallback: Knobs) -> Knobs {
        let (a, b) = (self, fallback);
        prefer!(
            a, b, input, output, csv, seed, threads, rank, basis, kappa, kappa_max, kappa_fixed, scale,
            rank_threshold, tol, max_sweeps, restarts, reps, n, level, design, preset, pi1, discrete
        )
    }

    pub fn load(path: &Path) -> Result<Knobs, CliError> {
        let text = crate::io::read_text(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var("TRIAD_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("TRIAD_SEED={v:?} is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }

    pub fn input(&self) -> Result<&Path, CliError> {
        self.input.as_deref().ok_or_else(|| CliError::Usage("--input is required".into()))
    }

    pub fn output(&self) -> Result<&Path, CliError> {
        self.output.as_deref().ok_or_else(|| CliError::Usage("--output is required".into()))
    }

    pub fn rank(&self) -> Result<usize, CliError> {
        match self.rank {
            Some(0) => Err(CliError::Usage("--rank must be positive".into())),
            Some(r) => Ok(r),
            None => Err(CliError::Usage("--rank is required".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_config() {
        let flags = Knobs {
            rank: Some(3),
            ..Knobs::default()
        };
        let file: Knobs = serde_json::from_str(r#"{"rank": 2, "reps": 7, "kappa-max": 12}"#).unwrap();
        let k = flags.or(file);
        assert_eq!(k.rank, Some(3));
        assert_eq!(k.reps, Some(7));
        assert_eq!(k.kappa_max, Some(12));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<Knobs>(r#"{"rnak": 2}"#).is_err());
    }
}
