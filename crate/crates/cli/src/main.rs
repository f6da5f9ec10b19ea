mod commands;
mod output;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use surropte::Error;

#[derive(Parser)]
#[command(name = "surropte", version, about = "Proportion of treatment effect explained by a surrogate")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the PTE on a CSV dataset.
    Estimate(EstimateArgs),
    /// Check the ordering assumptions for a previous estimate.
    Diagnose(DiagnoseArgs),
    /// Run a simulation scenario and tabulate bias, SE and coverage.
    Simulate(SimulateArgs),
    /// Monte Carlo truth for a simulation setting.
    Truth(TruthArgs),
    /// Write a simulated dataset as CSV.
    Generate(GenerateArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EstimateArgs {
    #[arg(long)]
    pub input: Option<String>,
    /// Outcome column.
    #[arg(long)]
    pub y: Option<String>,
    /// Surrogate column.
    #[arg(long)]
    pub s: Option<String>,
    /// Treatment column (0/1).
    #[arg(long)]
    pub a: Option<String>,
    /// Comma-separated covariate columns.
    #[arg(long)]
    pub x: Option<String>,
    /// ipw, dr or both.
    #[arg(long, default_value = "both")]
    pub estimator: String,
    /// Propensity terms, e.g. "x1, x2, log(x3), x1*x3". Default: the covariates.
    #[arg(long)]
    pub ps_basis: Option<String>,
    /// Treat assignment as randomized: the propensity is the treated fraction.
    #[arg(long)]
    pub randomized: bool,
    /// Covariate terms of the single index for S given X. Default: the covariates.
    #[arg(long)]
    pub or_index: Option<String>,
    /// Covariate terms of the varying-coefficient outcome model. Default: the covariates.
    #[arg(long)]
    pub or_regression: Option<String>,
    /// identity or logit.
    #[arg(long, default_value = "identity")]
    pub link: String,
    /// Perturbation replicates.
    #[arg(long = "B", default_value_t = 200)]
    pub b: usize,
    #[arg(long, env = "SURROPTE_SEED", default_value_t = 1)]
    pub seed: u64,
    /// Undersmoothing exponent: h = 1.06 n^(-1/5 - c0).
    #[arg(long, default_value_t = surropte::kernel::DEFAULT_C0)]
    pub c0: f64,
    #[arg(long, default_value_t = surropte::kernel::DEFAULT_GRID_SIZE)]
    pub grid_size: usize,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
    /// normal or percentile.
    #[arg(long, default_value = "normal")]
    pub ci_method: String,
    #[arg(long, default_value = "out")]
    pub out: String,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DiagnoseArgs {
    /// Output directory of a previous `estimate` run.
    #[arg(long)]
    pub from: String,
    /// Estimate to check (dr or ipw). Default: dr when it was run.
    #[arg(long)]
    pub estimator: Option<String>,
    /// Perturbation replicates for the standard errors. Default: as estimated.
    #[arg(long = "B")]
    pub b: Option<usize>,
    #[arg(long, default_value_t = surropte::diagnostics::DEFAULT_U_GRID_SIZE)]
    pub u_grid_size: usize,
    /// Default: the estimate directory.
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub setting: u8,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// cc, psw, orw or bw.
    #[arg(long, default_value = "cc")]
    pub scenario: String,
    /// Comma-separated: dr, ipw, f_naive, f_x, f_ipw, w_rct.
    #[arg(long, default_value = "dr,ipw")]
    pub estimators: String,
    #[arg(long = "B", default_value_t = 200)]
    pub b: usize,
    #[arg(long, env = "SURROPTE_SEED", default_value_t = 1)]
    pub seed: u64,
    /// truth.json from `surropte truth`; computed on the fly otherwise.
    #[arg(long)]
    pub truth: Option<String>,
    #[arg(long, default_value_t = 100_000)]
    pub truth_n: usize,
    #[arg(long, default_value_t = 20)]
    pub truth_reps: usize,
    #[arg(long, default_value = "out")]
    pub out: String,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TruthArgs {
    #[arg(long)]
    pub setting: u8,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, env = "SURROPTE_SEED", default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: String,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub setting: u8,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, env = "SURROPTE_SEED", default_value_t = 1)]
    pub seed: u64,
    /// Output CSV path.
    #[arg(long)]
    pub out: String,
}

/// Failure of a command, mapped onto the exit-code contract.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Estimation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Separation(_)
            | Error::SingularDesign
            | Error::EmptySupport
            | Error::NoOverlap
            | Error::DisjointSupport
            | Error::UnstablePte(_)
            | Error::DegenerateRanks
            | Error::VglmFailure
            | Error::ResamplingUnstable { .. } => Failure::Estimation(e.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Validation(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .expect("thread pool");
    }
    let result = match &cli.command {
        Command::Estimate(a) => commands::estimate(a),
        Command::Diagnose(a) => commands::diagnose(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Truth(a) => commands::truth(a),
        Command::Generate(a) => commands::generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Estimation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
