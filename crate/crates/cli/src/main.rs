//! `gpdelta`: build derivative bundles offline, correct predictions online,
//! and run the replication studies, timing benches and derivative audits.
//!
//! Exit codes: 0 success, 2 invalid input, 3 stale or malformed artifact,
//! 4 I/O, 5 numerical failure.

mod commands;
mod config;
mod error;
mod files;

use clap::{Parser, Subcommand};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "gpdelta",
    version,
    about = "Taylor correction of GP regressors for training-location errors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on planned inputs and write the derivative bundle.
    Offline(commands::offline::OfflineArgs),
    /// Apply location corrections to a stored prediction.
    Correct(commands::correct::CorrectArgs),
    /// Monte Carlo replication study.
    Simulate(commands::simulate::SimulateArgs),
    /// Retrain vs. correction wall-clock timing.
    Bench(commands::bench::BenchArgs),
    /// Compare derivative tensors with finite differences.
    Audit(commands::audit::AuditArgs),
    /// Tidy plot data (x, mean, lower, upper, series).
    Report(commands::report::ReportArgs),
}

/// Sizes the global rayon pool from `GPDELTA_THREADS`.
fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("GPDELTA_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::validation(format!(
            "GPDELTA_THREADS must be a positive integer, got '{v}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::validation(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match &cli.command {
        Command::Offline(a) => commands::offline::run(a),
        Command::Correct(a) => commands::correct::run(a),
        Command::Simulate(a) => commands::simulate::run(a),
        Command::Bench(a) => commands::bench::run(a),
        Command::Audit(a) => commands::audit::run(a),
        Command::Report(a) => commands::report::run(a),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        log::debug!("{e}");
        eprintln!("{}", e.to_json());
        std::process::exit(e.code);
    }
}
