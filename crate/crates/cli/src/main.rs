//! `stackmarket` command-line harness.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 a solver did not
//! converge, 3 infeasible problem, 4 file or format error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stackmarket::centralized::CentralizedError;
use stackmarket::distributed::DistributedError;
use stackmarket::milp::SolveStatus;
use stackmarket::model::ModelError;
use stackmarket::oracle::OracleError;

#[derive(Debug, Parser)]
#[command(name = "stackmarket", version, about = "Bandwidth pricing and association solvers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: RunOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a random scenario file.
    Gen,
    /// Run best-response pricing dynamics.
    Distributed,
    /// Solve the joint association and pricing problem.
    Centralized,
    /// Run both schemes on one scenario.
    Compare,
    /// Sweep one parameter and tabulate the outcome.
    Sweep,
    /// Check the solvers against brute-force oracles.
    OracleCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    Capacity,
    AlphaMean,
    Price,
    Quality,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunOptions {
    /// Scenario JSON; a scenario is generated from the seed when omitted.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value_t = 10)]
    pub users: usize,
    #[arg(long, global = true, default_value_t = 3)]
    pub msps: usize,
    /// Uniform provider capacity in MHz, overriding the scenario's.
    #[arg(long, global = true)]
    pub capacity: Option<f64>,
    /// Price cap shared by every provider, overriding the scenario's.
    #[arg(long, global = true)]
    pub pmax: Option<f64>,
    /// Learning rate of the pricing dynamics.
    #[arg(long, global = true, default_value_t = 1e-2)]
    pub mu: f64,
    /// Half-width of the central difference.
    #[arg(long, global = true, default_value_t = 1e-4)]
    pub dp: f64,
    /// Convergence tolerance of the pricing dynamics.
    #[arg(long, global = true, default_value_t = 1e-4)]
    pub tol: f64,
    /// Partition shrink factor of bound tightening.
    #[arg(long, global = true, default_value_t = 10.0)]
    pub beta: f64,
    /// Smallest partition width of bound tightening.
    #[arg(long, global = true, default_value_t = 1e-3)]
    pub epsilon: f64,
    /// Relative gap at which bound tightening stops.
    #[arg(long, global = true, default_value_t = 1e-6)]
    pub gap: f64,
    #[arg(long, global = true, value_enum)]
    pub sweep_axis: Option<SweepAxis>,
    /// Comma-separated ascending values.
    #[arg(long, global = true, value_delimiter = ',')]
    pub sweep_values: Vec<f64>,
    /// Sweep points solved concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STACKMARKET_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub const EXIT_NOT_CONVERGED: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_IO: u8 = 4;

fn solver_code(status: SolveStatus) -> u8 {
    match status {
        SolveStatus::Infeasible => EXIT_INFEASIBLE,
        _ => EXIT_NOT_CONVERGED,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            if matches!(e, ModelError::Io(_) | ModelError::Json(_)) {
                return EXIT_IO;
            }
        }
        if let Some(e) = cause.downcast_ref::<OracleError>() {
            if matches!(e, OracleError::Io(_) | OracleError::Json(_)) {
                return EXIT_IO;
            }
        }
        if let Some(DistributedError::NotConverged(_)) = cause.downcast_ref::<DistributedError>() {
            return EXIT_NOT_CONVERGED;
        }
        if let Some(e) = cause.downcast_ref::<CentralizedError>() {
            match e {
                CentralizedError::RoundLimit { .. } => return EXIT_NOT_CONVERGED,
                CentralizedError::Infeasible => return EXIT_INFEASIBLE,
                CentralizedError::Solver(status) => return solver_code(*status),
                CentralizedError::Distributed(DistributedError::NotConverged(_)) => return EXIT_NOT_CONVERGED,
                _ => {}
            }
        }
    }
    1
}
