//! `RunConfig`: one JSON document describing a run. Command-line flags are
//! applied on top of it.

use std::path::{Path, PathBuf};

use gpdelta_core::audit::AuditSettings;
use gpdelta_core::sim::{ExperimentConfig, Preset, TimingConfig};
use gpdelta_core::{CorrectionMode, Point};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::files::read_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Explicit training data, used by `offline` instead of simulating it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub planned_inputs: Vec<Point>,
    pub measurements: Vec<f64>,
    pub queries: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectSpec {
    pub bundle: Option<PathBuf>,
    pub prediction: Option<PathBuf>,
    pub deltas: Option<PathBuf>,
    /// Training data to check the bundle against.
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSpec {
    pub n: usize,
    pub p: usize,
    pub t: usize,
    pub instances: usize,
    pub seed: u64,
    pub settings: AuditSettings,
}

impl Default for AuditSpec {
    fn default() -> Self {
        Self {
            n: 11,
            p: 1,
            t: 20,
            instances: 1,
            seed: 0,
            settings: AuditSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    /// Takes precedence over `preset`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentConfig>,
    /// Trial whose draw `offline` and `report` use.
    pub trial: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSpec>,
    pub correct: CorrectSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

/// Flags shared by the experiment-driven subcommands.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ExperimentFlags {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// paper-1d, paper-2d or paper-1d-unit-amplitude.
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<CorrectionMode>,
    #[arg(long)]
    pub trials: Option<u32>,
}

pub fn parse_mode(s: &str) -> Result<CorrectionMode, String> {
    match s {
        "paper-diag" => Ok(CorrectionMode::PaperDiag),
        "full-hessian" => Ok(CorrectionMode::FullHessian),
        _ => Err("expected paper-diag or full-hessian".into()),
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => read_json(p),
            None => Ok(Self::default()),
        }
    }

    /// Loads the config named by `flags` and applies the flag overrides to
    /// the experiment, which is resolved and stored in `experiment`.
    pub fn resolve(flags: &ExperimentFlags) -> CliResult<Self> {
        let mut run = Self::load(flags.config.as_deref())?;
        let mut exp = match (flags.preset, run.experiment.take(), run.preset) {
            (Some(p), _, _) => {
                run.preset = Some(p);
                p.config()
            }
            (None, Some(e), _) => e,
            (None, None, Some(p)) => p.config(),
            (None, None, None) => ExperimentConfig::paper_1d(),
        };
        if let Some(s) = flags.seed {
            exp.base_seed = s;
        }
        if let Some(m) = flags.mode {
            exp.mode = m;
        }
        if let Some(t) = flags.trials {
            if t == 0 {
                return Err(CliError::validation("--trials must be at least 1"));
            }
            exp.trials = t as usize;
        }
        run.experiment = Some(exp);
        Ok(run)
    }

    pub fn experiment(&self) -> &ExperimentConfig {
        self.experiment.as_ref().expect("resolved")
    }

    pub fn out_path(&self, flag: Option<&Path>) -> Option<PathBuf> {
        flag.map(Path::to_path_buf).or_else(|| self.out.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_config_round_trips() {
        let run = RunConfig::resolve(&ExperimentFlags {
            preset: Some(Preset::Paper2d),
            seed: Some(7),
            trials: Some(3),
            mode: Some(CorrectionMode::FullHessian),
            ..Default::default()
        })
        .unwrap();
        let exp = run.experiment();
        assert_eq!(
            (exp.base_seed, exp.trials, exp.mode),
            (7, 3, CorrectionMode::FullHessian)
        );
        let text = serde_json::to_string(&run).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
        assert_eq!(back.experiment(), exp);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let mut exp = ExperimentConfig::paper_1d();
        exp.trials = 5;
        exp.base_seed = 1;
        std::fs::write(
            &path,
            serde_json::to_string(&serde_json::json!({ "experiment": exp })).unwrap(),
        )
        .unwrap();
        let flags = ExperimentFlags {
            config: Some(path.clone()),
            seed: Some(9),
            ..Default::default()
        };
        let run = RunConfig::resolve(&flags).unwrap();
        assert_eq!(
            (run.experiment().trials, run.experiment().base_seed),
            (5, 9)
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"trails": 3}"#).is_err());
        assert!(
            serde_json::from_str::<RunConfig>(r#"{"preset": "paper-2d", "format": "csv"}"#).is_ok()
        );
    }
}
