use std::path::PathBuf;

use gpdelta_core::sim::{
    run_1d_replication, run_2d_replication, run_replication, ExperimentReport,
};

use crate::config::{ExperimentFlags, Format, RunConfig};
use crate::error::CliResult;
use crate::files::{csv_bytes, emit, json_bytes, num, sidecar, write_json, Meta};

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub flags: ExperimentFlags,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

pub const TRIAL_COLUMNS: [&str; 8] = [
    "index",
    "seed",
    "mae_corrupted",
    "mae_corrected",
    "cov_err_corrupted",
    "cov_err_corrected",
    "improvement_pct",
    "delta_warnings",
];

fn trials_csv(report: &ExperimentReport) -> CliResult<Vec<u8>> {
    let header: Vec<String> = TRIAL_COLUMNS.iter().map(|s| s.to_string()).collect();
    let rows = report.results.trials.iter().map(|t| {
        vec![
            t.index.to_string(),
            t.seed.to_string(),
            num(t.mae_corrupted),
            num(t.mae_corrected),
            num(t.cov_err_corrupted),
            num(t.cov_err_corrected),
            num(t.improvement_pct),
            t.delta_warnings.to_string(),
        ]
    });
    csv_bytes(&header, rows)
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let run = RunConfig::resolve(&args.flags)?;
    let exp = run.experiment();
    let report = match exp.dim() {
        1 => run_1d_replication(exp)?,
        2 => run_2d_replication(exp)?,
        _ => run_replication(exp)?,
    };
    let out = run.out_path(args.out.as_deref());
    let agg = &report.results.aggregates;
    match args.format.or(run.format).unwrap_or(Format::Json) {
        Format::Json => emit(out.as_deref(), &json_bytes(&report)?)?,
        Format::Csv => {
            emit(out.as_deref(), &trials_csv(&report)?)?;
            if let Some(path) = &out {
                let details = serde_json::json!({
                    "aggregates": agg,
                    "skipped": report.results.skipped,
                    "timing": report.timing,
                });
                write_json(&sidecar(path), &Meta::new("simulate", &run, details))?;
            }
        }
    }
    eprintln!(
        "trials={} skipped={} mean_improvement_pct={:.3} median={:.3} win_fraction={:.4}",
        agg.completed,
        agg.skipped,
        agg.improvement_pct.mean,
        agg.improvement_pct.median,
        agg.win_fraction
    );
    Ok(())
}
