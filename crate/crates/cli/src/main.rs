//! `triad`: decompositions, mixture and hidden Markov fits, and Monte Carlo
//! experiments from the command line.
//!
//! Exit status is 0 on success, 2 when the identification conditions fail
//! (rank-deficient submodel) and 1 for any other error. Outputs are written
//! only when the whole command succeeds.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Knobs;
use error::CliError;

#[derive(Parser)]
#[command(name = "triad", version, about = "Multiway decompositions and nonparametric latent-structure estimators")]
struct Cli {
    /// JSON file with default values for any flag (same names as the flags).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Recover all factors and weights of a multiway array.
    Decompose(Knobs),
    /// Jointly diagonalize a stack of square matrices.
    Jadiag(Knobs),
    /// Fit a mixture to a CSV sample or a JSON count table.
    FitMixture(Knobs),
    /// Fit a three-period hidden Markov model.
    FitHmm(Knobs),
    /// Monte Carlo experiments.
    #[command(subcommand)]
    Experiment(Experiment),
    /// Draw a sample from a design.
    Gen(Knobs),
}

#[derive(Subcommand)]
enum Experiment {
    /// Integrated squared error of the density estimates over a design grid.
    Rmise(Knobs),
    /// Pointwise interval coverage for a hidden Markov design.
    Coverage(Knobs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => Knobs::load(path)?,
        None => Knobs::default(),
    };
    let (run, flags): (fn(&Knobs) -> Result<(), CliError>, Knobs) = match cli.command {
        Command::Decompose(k) => (commands::decompose, k),
        Command::Jadiag(k) => (commands::jadiag, k),
        Command::FitMixture(k) => (commands::fit_mixture, k),
        Command::FitHmm(k) => (commands::fit_hmm_cmd, k),
        Command::Experiment(Experiment::Rmise(k)) => (commands::experiment_rmise, k),
        Command::Experiment(Experiment::Coverage(k)) => (commands::experiment_coverage, k),
        Command::Gen(k) => (commands::gen, k),
    };
    let knobs = flags.or(file);
    if let Some(t) = knobs.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    run(&knobs)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
