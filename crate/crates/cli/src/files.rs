//! On-disk formats shared by the subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use gpdelta_core::sim::REPORT_SCHEMA_VERSION;
use gpdelta_core::{CorrectedPrediction, InputDigest, PerturbationSet, Point, Prediction, VERSION};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Mean and covariance at the query points. Carries no provenance so that an
/// unchanged prediction rewrites to the same bytes; see [`Meta`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionFile {
    pub planned_inputs_digest: InputDigest,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl PredictionFile {
    fn from_parts(digest: InputDigest, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Self {
        Self {
            planned_inputs_digest: digest,
            mean: mean.iter().copied().collect(),
            covariance: cov
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
    }

    pub fn from_prediction(p: &Prediction) -> Self {
        Self::from_parts(p.planned_inputs_digest, &p.mean, &p.covariance)
    }

    pub fn from_corrected(c: &CorrectedPrediction, digest: InputDigest) -> Self {
        Self::from_parts(digest, &c.mean, &c.covariance)
    }

    pub fn to_prediction(&self) -> CliResult<Prediction> {
        let t = self.mean.len();
        if self.covariance.len() != t || self.covariance.iter().any(|r| r.len() != t) {
            return Err(CliError::validation(format!(
                "prediction file: covariance must be {t} x {t} to match the mean"
            )));
        }
        Ok(Prediction {
            mean: DVector::from_vec(self.mean.clone()),
            covariance: DMatrix::from_fn(t, t, |r, c| self.covariance[r][c]),
            planned_inputs_digest: self.planned_inputs_digest,
        })
    }

    pub fn variances(&self) -> Vec<f64> {
        (0..self.mean.len())
            .map(|e| self.covariance[e][e])
            .collect()
    }
}

/// Training data and query points, plus the field at the queries when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFile {
    pub planned_inputs: Vec<Point>,
    pub measurements: Vec<f64>,
    pub queries: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
}

/// Per-point steps, either bare or with a warning bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltasFile {
    Bare(Vec<Vec<f64>>),
    Bounded {
        deltas: Vec<Vec<f64>>,
        #[serde(default)]
        delta_max: Option<f64>,
    },
}

impl DeltasFile {
    pub fn from_set(set: &PerturbationSet) -> Self {
        Self::Bounded {
            deltas: set.deltas.clone(),
            delta_max: set.delta_max.is_finite().then_some(set.delta_max),
        }
    }

    pub fn into_set(self) -> PerturbationSet {
        match self {
            Self::Bare(d) => PerturbationSet::new(d),
            Self::Bounded { deltas, delta_max } => {
                let s = PerturbationSet::new(deltas);
                match delta_max {
                    Some(d) => s.with_delta_max(d),
                    None => s,
                }
            }
        }
    }
}

/// Provenance written next to every output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta<T> {
    pub schema_version: u32,
    pub software_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub details: T,
}

impl<T> Meta<T> {
    pub fn new(command: &str, config: &impl Serialize, details: T) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            software_version: VERSION.to_string(),
            command: command.to_string(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            details,
        }
    }
}

/// `<path>.meta.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

pub fn json_bytes(value: &impl Serialize) -> CliResult<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::validation(format!("serializing output: {e}")))?;
    v.push(b'\n');
    Ok(v)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path.display(), e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    write_bytes(path, &json_bytes(value)?)
}

/// Writes to `path`, or to stdout when there is none.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => write_bytes(p, bytes),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| CliError::io("stdout", e))
        }
    }
}

/// CSV with a header row and LF line endings.
pub fn csv_bytes(
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> CliResult<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let err = |e: csv::Error| CliError::validation(format!("writing csv: {e}"));
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.into_inner()
        .map_err(|e| CliError::validation(format!("writing csv: {e}")))
}

/// Shortest round-trip representation.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}
