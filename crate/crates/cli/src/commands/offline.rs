use std::path::PathBuf;
use std::time::Instant;

use gpdelta_core::sim::run_trial_snapshot;
use gpdelta_core::{build_bundle, save_bundle, train, CorrectionMode, Dataset, QuerySet};
use serde::Serialize;

use crate::config::{ExperimentFlags, RunConfig};
use crate::error::{CliError, CliResult};
use crate::files::{write_json, DataFile, DeltasFile, Meta, PredictionFile};

#[derive(Debug, clap::Args)]
pub struct OfflineArgs {
    #[command(flatten)]
    pub flags: ExperimentFlags,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trial whose draw supplies the training data (ignored with explicit training data).
    #[arg(long)]
    pub trial: Option<usize>,
}

#[derive(Serialize)]
struct OfflineSummary {
    n: usize,
    t: usize,
    p: usize,
    mode: CorrectionMode,
    full_mean_hessian: bool,
    build_time_s: f64,
    bundle_bytes: u64,
    files: Vec<&'static str>,
}

pub fn run(args: &OfflineArgs) -> CliResult<()> {
    let mut run = RunConfig::resolve(&args.flags)?;
    if let Some(k) = args.trial {
        run.trial = k;
    }
    let dir = run
        .out_path(args.out.as_deref())
        .ok_or_else(|| CliError::validation("offline needs --out <dir>"))?;
    let exp = run.experiment().clone();
    exp.kernel.validate()?;

    let mut files = vec!["bundle.gpdb", "prediction.json", "data.json", "meta.json"];
    let (data, queries, truth) = match &run.training {
        Some(tr) => (
            Dataset::new(tr.planned_inputs.clone(), tr.measurements.clone())?,
            QuerySet::new(tr.queries.clone())?,
            None,
        ),
        None => {
            exp.validate()?;
            let snap = run_trial_snapshot(&exp, run.trial)?;
            // What a deployment would only learn later; kept for `correct` and `report`.
            write_json(&dir.join("deltas.json"), &DeltasFile::from_set(&snap.steps))?;
            write_json(
                &dir.join("reference.json"),
                &PredictionFile::from_prediction(&snap.perfect),
            )?;
            files.extend(["deltas.json", "reference.json"]);
            (
                Dataset::new(snap.planned, snap.measurements)?,
                snap.queries,
                Some(snap.truth.iter().copied().collect::<Vec<_>>()),
            )
        }
    };
    if data.dim() != queries.dim() {
        return Err(CliError::validation(format!(
            "training inputs have dimension {}, queries {}",
            data.dim(),
            queries.dim()
        )));
    }

    let gp = train(exp.kernel, data.clone())?;
    let prediction = gp.predict(&queries)?;
    let t0 = Instant::now();
    let bundle = build_bundle(&gp, &queries, exp.mode == CorrectionMode::FullHessian)?;
    let build_time_s = t0.elapsed().as_secs_f64();

    let bundle_path = dir.join("bundle.gpdb");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(dir.display(), e))?;
    save_bundle(&bundle, &bundle_path)?;
    write_json(
        &dir.join("prediction.json"),
        &PredictionFile::from_prediction(&prediction),
    )?;
    write_json(
        &dir.join("data.json"),
        &DataFile {
            planned_inputs: data.planned_inputs.clone(),
            measurements: data.measurements.clone(),
            queries: queries.points.clone(),
            truth,
        },
    )?;

    let summary = OfflineSummary {
        n: bundle.meta.n,
        t: bundle.meta.t,
        p: bundle.meta.p,
        mode: exp.mode,
        full_mean_hessian: bundle.has_full_hessian(),
        build_time_s,
        bundle_bytes: std::fs::metadata(&bundle_path)
            .map(|m| m.len())
            .unwrap_or(0),
        files,
    };
    write_json(
        &dir.join("meta.json"),
        &Meta::new("offline", &run, &summary),
    )?;
    println!(
        "bundle n={} t={} p={} mode={} build_time_s={:.6} bytes={} -> {}",
        summary.n,
        summary.t,
        summary.p,
        exp.mode,
        build_time_s,
        summary.bundle_bytes,
        bundle_path.display()
    );
    Ok(())
}
