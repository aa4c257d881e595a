//! Command-line frontend: loads a model, runs one analysis and writes
//! CSV/JSON results with a manifest.
//!
//! Exit codes: 0 success, 1 scientific negative (a hypothesis fails, no
//! equilibrium exists, a verification check is red), 2 usage or
//! configuration error, 3 numerical failure.

pub mod bundled;
mod commands;
pub mod compare;
pub mod config;
pub mod suite;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use metapop_core::Error;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Success,
    Negative,
    Usage,
    Numerical,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            Self::Success => 0,
            Self::Negative => 1,
            Self::Usage => 2,
            Self::Numerical => 3,
        }
    }

    pub fn of_error(e: &Error) -> Self {
        match e {
            Error::InvalidModel(_) | Error::InvalidArgument(_) => Self::Usage,
            Error::H2Violated { .. } | Error::NoBound => Self::Negative,
            Error::TruncationDiverged { .. }
            | Error::SpectralDomain(_)
            | Error::FixedPointFailure(_)
            | Error::Stiffness { .. }
            | Error::IntegrationDiverged { .. }
            | Error::ComparisonViolated { .. }
            | Error::CouplingBug { .. }
            | Error::OracleMismatch { .. } => Self::Numerical,
        }
    }
}

/// A run that ended before producing its report.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub status: ExitStatus,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { status: ExitStatus::Usage, message: message.into() }
    }

    pub fn negative(message: impl Into<String>) -> Self {
        Self { status: ExitStatus::Negative, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self { status: ExitStatus::of_error(&e), message: e.to_string() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "metapop", version, about = "Equilibria, thresholds and dynamics of a catastrophe-driven metapopulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Clone, Args)]
pub struct Options {
    /// Model JSON: a file path, inline JSON, or builtin:NAME
    #[arg(long, global = true, value_name = "PATH")]
    pub model: Option<String>,
    /// Directory receiving CSV/JSON outputs and manifest.json
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1, value_name = "U64")]
    pub seed: u64,
    /// Solver tolerance
    #[arg(long, global = true, value_name = "F")]
    pub tol: Option<f64>,
    /// Final time
    #[arg(long = "T", global = true, value_name = "F")]
    pub t_end: Option<f64>,
    /// Truncation level of the deterministic system
    #[arg(long = "N", global = true, value_name = "INT")]
    pub n: Option<usize>,
    /// Number of patches in stochastic runs
    #[arg(long, global = true, value_name = "INT")]
    pub patches: Option<usize>,
    /// Sample grid a:b:step (s values, nu values or sample times, by command)
    #[arg(long, global = true, value_name = "a:b:step")]
    pub grid: Option<String>,
    /// Initial condition: delta:K, uniform:A:B or empty
    #[arg(long, global = true, value_name = "SPEC")]
    pub init: Option<String>,
    /// Reduced replicate counts and a subset of the checks
    #[arg(long, global = true)]
    pub quick: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check the concavity/convexity and subcriticality-at-infinity hypotheses
    Check,
    /// Solve for the persistence threshold and the equilibrium mean occupancy
    Threshold,
    /// Threshold quantities over a grid of catastrophe rates
    Sweep,
    /// Integrate the truncated deterministic system
    Integrate,
    /// Simulate a finite metapopulation and compare with the deterministic system
    Simulate,
    /// Run the verification suite
    Verify,
    /// List the bundled models
    Models,
}

/// Reads `METAPOP_THREADS`; `None` leaves the pool size to rayon.
pub fn thread_cap() -> Result<Option<usize>, Failure> {
    match std::env::var("METAPOP_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::usage(format!("METAPOP_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

/// Runs a parsed command inside a worker pool sized by `METAPOP_THREADS`.
pub fn execute(cli: &Cli) -> Result<ExitStatus, Failure> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Failure::usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| commands::dispatch(cli.command, &cli.opts))
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitStatus::Usage.code() } else { ExitStatus::Success.code() };
        }
    };
    match execute(&cli) {
        Ok(status) => status.code(),
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.status.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_codes() {
        assert_eq!(ExitStatus::of_error(&Error::InvalidModel("x".into())).code(), 2);
        assert_eq!(ExitStatus::of_error(&Error::H2Violated { margin: -1.0 }).code(), 1);
        let diverged = Error::IntegrationDiverged { t: 1.0, reason: "leak".into() };
        assert_eq!(ExitStatus::of_error(&diverged).code(), 3);
    }

    #[test]
    fn global_flags_parse_after_subcommand() {
        let cli = Cli::try_parse_from(["metapop", "integrate", "--T", "5", "--N", "30", "--model", "builtin:logistic"])
            .unwrap();
        assert_eq!(cli.command, Command::Integrate);
        assert_eq!(cli.opts.t_end, Some(5.0));
        assert_eq!(cli.opts.n, Some(30));
        assert_eq!(cli.opts.seed, 1);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["metapop", "frobnicate"]), 2);
        assert_eq!(run(["metapop", "check", "--seed", "x"]), 2);
        assert_eq!(run(["metapop", "check"]), 2);
    }
}
