use std::path::PathBuf;

use gpdelta_core::sim::run_timing_bench;

use crate::config::{Format, RunConfig};
use crate::error::CliResult;
use crate::files::{csv_bytes, emit, json_bytes, num, sidecar, write_json, Meta};

#[derive(Debug, clap::Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training-set sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    /// Query-set sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub t: Vec<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

pub fn run(args: &BenchArgs) -> CliResult<()> {
    let mut run = RunConfig::load(args.config.as_deref())?;
    let mut cfg = run.timing.take().unwrap_or_default();
    if !args.n.is_empty() {
        cfg.n_list = args.n.clone();
    }
    if !args.t.is_empty() {
        cfg.t_list = args.t.clone();
    }
    if let Some(r) = args.repeats {
        cfg.repeats = r;
    }
    run.timing = Some(cfg.clone());
    let table = run_timing_bench(&cfg)?;
    let out = run.out_path(args.out.as_deref());

    match args.format.or(run.format).unwrap_or(Format::Csv) {
        Format::Json => emit(
            out.as_deref(),
            &json_bytes(&Meta::new("bench", &run, &table))?,
        )?,
        Format::Csv => {
            let header = [
                "n",
                "t",
                "retrain_s",
                "train_s",
                "online_s",
                "batch_s",
                "offline_s",
                "speedup_online",
                "speedup_batch",
            ];
            let rows = table.rows.iter().map(|r| {
                vec![
                    r.n.to_string(),
                    r.t.to_string(),
                    num(r.retrain_s),
                    num(r.train_s),
                    num(r.online_s),
                    num(r.batch_s),
                    num(r.offline_s),
                    num(r.speedup_online),
                    num(r.speedup_batch),
                ]
            });
            emit(out.as_deref(), &csv_bytes(&header.map(String::from), rows)?)?;
            if let Some(path) = &out {
                write_json(
                    &sidecar(path),
                    &Meta::new("bench", &run, serde_json::json!({ "slopes": table.slopes })),
                )?;
            }
        }
    }
    for s in &table.slopes {
        eprintln!(
            "slope vs n at t={}: retrain {:.3} (train only {:.3}) online {:.3} batch {:.3}",
            s.t, s.retrain, s.train, s.online, s.batch
        );
    }
    Ok(())
}
