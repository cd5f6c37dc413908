use std::path::PathBuf;

use gpdelta_core::{correct, load_bundle, CorrectionMode, DeltaBoundWarning, InputDigest};
use serde::Serialize;

use crate::config::{parse_mode, RunConfig};
use crate::error::{CliError, CliResult};
use crate::files::{
    json_bytes, read_json, sidecar, write_bytes, write_json, DataFile, DeltasFile, Meta,
    PredictionFile,
};

#[derive(Debug, clap::Args)]
pub struct CorrectArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Uncorrected prediction written by `offline`.
    #[arg(long)]
    pub prediction: Option<PathBuf>,
    /// JSON array of per-point steps, or `{"deltas": [...], "delta_max": ...}`.
    #[arg(long)]
    pub deltas: Option<PathBuf>,
    /// Training data to verify the bundle against.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<CorrectionMode>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct CorrectSummary {
    mode: CorrectionMode,
    n: usize,
    t: usize,
    warnings: Vec<DeltaBoundWarning>,
    max_asymmetry: f64,
    negative_variance_fraction: f64,
}

pub fn run(args: &CorrectArgs) -> CliResult<()> {
    let mut run = RunConfig::load(args.config.as_deref())?;
    let spec = &mut run.correct;
    for (slot, flag) in [
        (&mut spec.bundle, &args.bundle),
        (&mut spec.prediction, &args.prediction),
        (&mut spec.deltas, &args.deltas),
        (&mut spec.data, &args.data),
    ] {
        if flag.is_some() {
            *slot = flag.clone();
        }
    }
    let need = |p: &Option<PathBuf>, name: &str| {
        p.clone()
            .ok_or_else(|| CliError::validation(format!("correct needs --{name}")))
    };
    let bundle_path = need(&spec.bundle, "bundle")?;
    let prediction_path = need(&spec.prediction, "prediction")?;
    let deltas_path = need(&spec.deltas, "deltas")?;
    let out = run
        .out_path(args.out.as_deref())
        .ok_or_else(|| CliError::validation("correct needs --out"))?;
    let mode = args
        .mode
        .or(run.experiment.as_ref().map(|e| e.mode))
        .unwrap_or_default();

    let bundle = load_bundle(&bundle_path).map_err(|e| match e {
        gpdelta_core::GpError::Io(io) => CliError::io(bundle_path.display(), io),
        other => other.into(),
    })?;
    if let Some(path) = &run.correct.data {
        let data: DataFile = read_json(path)?;
        bundle.check_inputs(&InputDigest::of_points(&data.planned_inputs))?;
        if bundle.meta.measurements_hash != InputDigest::of_values(&data.measurements) {
            return Err(gpdelta_core::GpError::StaleBundle(
                "bundle was built with different measurements".into(),
            )
            .into());
        }
    }
    let file: PredictionFile = read_json(&prediction_path)?;
    let prediction = file.to_prediction()?;
    let deltas: DeltasFile = read_json(&deltas_path)?;
    let steps = deltas.into_set();

    let corrected = correct(&prediction, &bundle, &steps, mode)?;
    write_bytes(
        &out,
        &json_bytes(&PredictionFile::from_corrected(
            &corrected,
            prediction.planned_inputs_digest,
        ))?,
    )?;

    let summary = CorrectSummary {
        mode,
        n: bundle.meta.n,
        t: bundle.meta.t,
        warnings: corrected.warnings.clone(),
        max_asymmetry: corrected.max_asymmetry,
        negative_variance_fraction: corrected.clamped_fraction(),
    };
    write_json(&sidecar(&out), &Meta::new("correct", &run, &summary))?;
    println!(
        "mode={mode} n={} t={} warnings={} -> {}",
        summary.n,
        summary.t,
        summary.warnings.len(),
        out.display()
    );
    for w in &summary.warnings {
        eprintln!(
            "warning: step for point {} has norm {:.3e}, above delta_max {:.3e}",
            w.index, w.norm, w.delta_max
        );
    }
    Ok(())
}
