use std::path::PathBuf;

use gpdelta_core::sim::run_trial_snapshot;
use gpdelta_core::Point;
use serde::Serialize;

use crate::config::{ExperimentFlags, Format, RunConfig};
use crate::error::{CliError, CliResult};
use crate::files::{csv_bytes, emit, json_bytes, num, read_json, DataFile, Meta, PredictionFile};

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub flags: ExperimentFlags,
    /// Trial to plot when simulating.
    #[arg(long)]
    pub trial: Option<usize>,
    /// `data.json` from `offline`; switches to plotting existing prediction files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `name=path` of a prediction file to include; repeatable.
    #[arg(long = "series", value_parser = parse_series)]
    pub series: Vec<(String, PathBuf)>,
    /// Band half-width in standard deviations.
    #[arg(long, default_value_t = 2.0)]
    pub band: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

fn parse_series(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), PathBuf::from(path)))
        }
        _ => Err("expected name=path".into()),
    }
}

/// One row of tidy plot data.
#[derive(Debug, Clone, Serialize)]
pub struct PlotRow {
    pub x: Vec<f64>,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub series: String,
}

fn series_rows(
    name: &str,
    queries: &[Point],
    mean: &[f64],
    var: Option<&[f64]>,
    band: f64,
) -> Vec<PlotRow> {
    queries
        .iter()
        .enumerate()
        .map(|(e, q)| {
            let half = var.map_or(0.0, |v| band * v[e].max(0.0).sqrt());
            PlotRow {
                x: q.coords().to_vec(),
                mean: mean[e],
                lower: mean[e] - half,
                upper: mean[e] + half,
                series: name.to_string(),
            }
        })
        .collect()
}

pub fn run(args: &ReportArgs) -> CliResult<()> {
    let mut run = RunConfig::resolve(&args.flags)?;
    if let Some(k) = args.trial {
        run.trial = k;
    }
    if !(args.band.is_finite() && args.band >= 0.0) {
        return Err(CliError::validation("--band must be non-negative"));
    }
    let mut rows = Vec::new();
    let queries = match &args.data {
        Some(path) => {
            let data: DataFile = read_json(path)?;
            if let Some(truth) = &data.truth {
                rows.extend(series_rows("truth", &data.queries, truth, None, args.band));
            }
            for (name, p) in &args.series {
                let f: PredictionFile = read_json(p)?;
                f.to_prediction()?;
                if f.mean.len() != data.queries.len() {
                    return Err(CliError::validation(format!(
                        "series '{name}' has {} points, data has {} queries",
                        f.mean.len(),
                        data.queries.len()
                    )));
                }
                rows.extend(series_rows(
                    name,
                    &data.queries,
                    &f.mean,
                    Some(&f.variances()),
                    args.band,
                ));
            }
            data.queries
        }
        None => {
            if !args.series.is_empty() {
                return Err(CliError::validation("--series needs --data"));
            }
            let exp = run.experiment();
            exp.validate()?;
            let s = run_trial_snapshot(exp, run.trial)?;
            let q = &s.queries.points;
            let truth: Vec<f64> = s.truth.iter().copied().collect();
            rows.extend(series_rows("truth", q, &truth, None, args.band));
            for (name, mean, var) in [
                ("perfect", &s.perfect.mean, s.perfect.variances()),
                ("corrupted", &s.corrupted.mean, s.corrupted.variances()),
                (
                    "corrected",
                    &s.corrected.mean,
                    s.corrected.covariance.diagonal(),
                ),
            ] {
                let m: Vec<f64> = mean.iter().copied().collect();
                let v: Vec<f64> = var.iter().copied().collect();
                rows.extend(series_rows(name, q, &m, Some(&v), args.band));
            }
            s.queries.points
        }
    };
    let p = queries.first().map_or(1, |q| q.dim());
    let out = run.out_path(args.out.as_deref());
    match args.format.or(run.format).unwrap_or(Format::Csv) {
        Format::Json => emit(
            out.as_deref(),
            &json_bytes(&Meta::new("report", &run, &rows))?,
        ),
        Format::Csv => {
            let mut header: Vec<String> = if p == 1 {
                vec!["x".into()]
            } else {
                (0..p).map(|j| format!("x{j}")).collect()
            };
            header.extend(["mean", "lower", "upper", "series"].map(String::from));
            let body = rows.iter().map(|r| {
                let mut rec: Vec<String> = r.x.iter().map(|v| num(*v)).collect();
                rec.extend([num(r.mean), num(r.lower), num(r.upper), r.series.clone()]);
                rec
            });
            emit(out.as_deref(), &csv_bytes(&header, body)?)
        }
    }
}
