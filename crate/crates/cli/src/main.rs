//! `gst-ppca`: fit, decompose and stress-test generalized skew-t PPCA models
//! on CSV panels.

mod commands;
mod error;
mod panel;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gst_ppca::EmConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "gst-ppca",
    version,
    about = "Generalized skew-t probabilistic PCA"
)]
struct Cli {
    /// Worker threads for grid points and replications (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model over a grid of degrees of freedom and write a JSON report.
    Fit(commands::fit::FitArgs),
    /// Draw a sample from a model and write it as CSV.
    Simulate(commands::simulate::SimulateArgs),
    /// Robustness tables of the sigma2 and W estimators.
    Influence(commands::influence::InfluenceArgs),
    /// Eigenvectors and eigenvalue ratios of a fitted covariance as CSV.
    Decompose(commands::decompose::DecomposeArgs),
    /// Standardize every column by its Huber location and scale.
    Standardize(commands::standardize::StandardizeArgs),
    /// Mean squared errors of competing estimators by sample size.
    MseStudy(commands::mse::MseArgs),
}

/// EM settings shared by the fitting commands.
#[derive(Debug, Clone, Args)]
pub struct EmArgs {
    /// Gauss-Legendre nodes per axis of the unit square.
    #[arg(long, default_value_t = 32)]
    pub quad_n: usize,
    /// Maximum EM iterations per fit.
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Relative log-likelihood change that counts as converged.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

impl EmArgs {
    pub fn config(&self) -> Result<EmConfig> {
        if self.quad_n == 0 || self.max_iter == 0 || !(self.tol > 0.0) {
            return error::usage("--quad-n and --max-iter must be positive and --tol above zero");
        }
        Ok(EmConfig {
            grid_n: self.quad_n,
            max_iter: self.max_iter,
            rel_tol: self.tol,
            ..EmConfig::default()
        })
    }
}

/// Destination of a command's main output; standard output when absent.
#[derive(Debug, Clone, Args)]
pub struct OutputArg {
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// What a command reports back besides its output files.
pub enum Outcome {
    /// Everything requested succeeded.
    Done,
    /// Output was written but some fits failed or did not converge.
    Incomplete,
}

fn run(cli: Cli) -> Result<Outcome> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Fit(a) => commands::fit::run(&a),
        Command::Simulate(a) => commands::simulate::run(&a),
        Command::Influence(a) => commands::influence::run(&a),
        Command::Decompose(a) => commands::decompose::run(&a),
        Command::Standardize(a) => commands::standardize::run(&a),
        Command::MseStudy(a) => commands::mse::run(&a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Incomplete) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
