//! Monte Carlo replication of the planned-versus-actual location studies
//! and the offline/online timing comparison.
//!
//! One trial: draw location errors `δ_i` from the perturbation model and set
//! the actual inputs to `x_i = x̂_i − δ_i`; measure the field at `x_i` with
//! additive noise; train the corrupted model on `(x̂, z)` and the perfect model
//! on `(x, z)`; correct the corrupted prediction with the step `−γ·δ_i` and
//! compare both against the perfect one over the query set.

mod field;
mod perturbation;
mod timing;

pub use field::{FieldSpec, Interpolation};
pub use perturbation::{PerturbationKind, PerturbationModel};
pub use timing::{run_timing_bench, SlopeSummary, TimingConfig, TimingRow, TimingTable};

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::build_bundle;
use crate::correction::{correct, CorrectedPrediction, CorrectionMode, PerturbationSet};
use crate::error::{GpError, Result};
use crate::gp::{retrain_oracle, train, Dataset, Prediction, QuerySet};
use crate::kernel::{KernelParams, Point};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// A set of input locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocationSpec {
    /// Tensor grid with `counts[d]` evenly spaced nodes on
    /// `[lower[d], upper[d]]`, last coordinate varying fastest.
    Grid {
        lower: Vec<f64>,
        upper: Vec<f64>,
        counts: Vec<usize>,
    },
    Explicit {
        points: Vec<Vec<f64>>,
    },
}

impl LocationSpec {
    pub fn unit_grid(counts: Vec<usize>) -> Self {
        let p = counts.len();
        LocationSpec::Grid {
            lower: vec![0.0; p],
            upper: vec![1.0; p],
            counts,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            LocationSpec::Grid { counts, .. } => Some(counts.len()),
            LocationSpec::Explicit { points } => points.first().map(Vec::len),
        }
    }

    pub fn points(&self) -> Result<Vec<Point>> {
        match self {
            LocationSpec::Grid {
                lower,
                upper,
                counts,
            } => {
                let p = counts.len();
                if p == 0 || lower.len() != p || upper.len() != p {
                    return Err(GpError::Dimension(
                        "grid bounds and counts must share one non-zero length".into(),
                    ));
                }
                if counts.contains(&0) {
                    return Err(GpError::Invalid("grid counts must be positive".into()));
                }
                if lower.iter().chain(upper).any(|v| !v.is_finite())
                    || lower.iter().zip(upper).any(|(l, u)| l > u)
                {
                    return Err(GpError::Invalid(
                        "grid bounds must be finite with lower <= upper".into(),
                    ));
                }
                let axes: Vec<Vec<f64>> = (0..p)
                    .map(|d| linspace(lower[d], upper[d], counts[d]))
                    .collect();
                let total: usize = counts.iter().product();
                let mut out = Vec::with_capacity(total);
                let mut idx = vec![0usize; p];
                for _ in 0..total {
                    out.push(Point::new((0..p).map(|d| axes[d][idx[d]]).collect()));
                    for d in (0..p).rev() {
                        idx[d] += 1;
                        if idx[d] < counts[d] {
                            break;
                        }
                        idx[d] = 0;
                    }
                }
                Ok(out)
            }
            LocationSpec::Explicit { points } => {
                let p = points.first().map(Vec::len).unwrap_or(0);
                if points.is_empty() || p == 0 || points.iter().any(|x| x.len() != p) {
                    return Err(GpError::Dimension(
                        "explicit points must be non-empty with one common dimension".into(),
                    ));
                }
                Ok(points.iter().cloned().map(Point::new).collect())
            }
        }
    }
}

fn linspace(a: f64, b: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![a];
    }
    (0..k)
        .map(|i| a + (b - a) * i as f64 / (k - 1) as f64)
        .collect()
}

/// Named configurations for the two replication studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "paper-1d")]
    Paper1d,
    #[serde(rename = "paper-2d")]
    Paper2d,
    /// As `Paper1d` with unit kernel amplitude, for sensitivity checks.
    #[serde(rename = "paper-1d-unit-amplitude")]
    Paper1dUnitAmplitude,
}

impl std::str::FromStr for Preset {
    type Err = GpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-1d" => Ok(Self::Paper1d),
            "paper-2d" => Ok(Self::Paper2d),
            "paper-1d-unit-amplitude" => Ok(Self::Paper1dUnitAmplitude),
            other => Err(GpError::Invalid(format!(
                "unknown preset '{other}' (expected paper-1d, paper-2d or paper-1d-unit-amplitude)"
            ))),
        }
    }
}

impl Preset {
    pub fn config(self) -> ExperimentConfig {
        match self {
            Preset::Paper1d => ExperimentConfig::paper_1d(),
            Preset::Paper2d => ExperimentConfig::paper_2d(),
            Preset::Paper1dUnitAmplitude => {
                let mut c = ExperimentConfig::paper_1d();
                c.kernel.amplitude = 1.0;
                c
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub field: FieldSpec,
    pub kernel: KernelParams,
    pub planned: LocationSpec,
    pub queries: LocationSpec,
    pub perturbation: PerturbationModel,
    /// Std of the additive noise on each measurement.
    pub measurement_noise_std: f64,
    /// Fraction `γ` of the true location error handed to the correction.
    pub knowledge_factor: f64,
    pub mode: CorrectionMode,
    pub trials: usize,
    pub base_seed: u64,
    /// Bound used for step-size warnings; defaults to the model's bound.
    #[serde(default)]
    pub delta_max: Option<f64>,
}

impl ExperimentConfig {
    /// 1D study: 11 planned points on [0, 1], 100 queries, `δ ~ U[0, 0.03]`.
    pub fn paper_1d() -> Self {
        Self {
            field: FieldSpec::Sine1d,
            kernel: KernelParams {
                amplitude: 0.1,
                length_scale: 0.2,
                noise_std: 0.01,
                jitter: KernelParams::DEFAULT_JITTER,
            },
            planned: LocationSpec::unit_grid(vec![11]),
            queries: LocationSpec::unit_grid(vec![100]),
            perturbation: PerturbationModel {
                kind: PerturbationKind::UniformInterval {
                    low: 0.0,
                    high: 0.03,
                },
                affected_coords: vec![0],
            },
            measurement_noise_std: 0.01,
            knowledge_factor: 1.0,
            mode: CorrectionMode::PaperDiag,
            trials: 1000,
            base_seed: 0,
            delta_max: None,
        }
    }

    /// 2D study: 11x11 planned grid, 10x10 queries, constant offset 0.1 on x.
    pub fn paper_2d() -> Self {
        Self {
            field: FieldSpec::SineCosine2d,
            planned: LocationSpec::unit_grid(vec![11, 11]),
            queries: LocationSpec::unit_grid(vec![10, 10]),
            perturbation: PerturbationModel {
                kind: PerturbationKind::ConstantOffset { offset: vec![0.1] },
                affected_coords: vec![0],
            },
            ..Self::paper_1d()
        }
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.field.validate()?;
        let p = self.dim();
        for (name, spec) in [("planned", &self.planned), ("queries", &self.queries)] {
            let pts = spec.points()?;
            if pts[0].dim() != p {
                return Err(GpError::Dimension(format!(
                    "{name} locations have dimension {}, field has {p}",
                    pts[0].dim()
                )));
            }
        }
        self.perturbation.validate(p)?;
        if !(self.measurement_noise_std.is_finite() && self.measurement_noise_std >= 0.0) {
            return Err(GpError::Invalid(
                "measurement_noise_std must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.knowledge_factor) {
            return Err(GpError::Invalid(format!(
                "knowledge_factor must lie in [0, 1], got {}",
                self.knowledge_factor
            )));
        }
        if self.trials == 0 {
            return Err(GpError::Invalid("trials must be at least 1".into()));
        }
        if let Some(d) = self.delta_max {
            if d.is_nan() || d <= 0.0 {
                return Err(GpError::Invalid("delta_max must be positive".into()));
            }
        }
        Ok(())
    }

    fn effective_delta_max(&self) -> f64 {
        self.delta_max
            .or_else(|| self.perturbation.bound().map(|b| b * self.knowledge_factor))
            .filter(|b| *b > 0.0)
            .unwrap_or(f64::INFINITY)
    }
}

/// Seed for trial `k`: a SplitMix64 finalizer over `(base_seed, k)`, so any
/// trial can be rerun in isolation.
pub fn trial_seed(base_seed: u64, k: u64) -> u64 {
    let mut z = base_seed ^ k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub seed: u64,
    pub mae_corrupted: f64,
    pub mae_corrected: f64,
    pub cov_err_corrupted: f64,
    pub cov_err_corrected: f64,
    pub improvement_pct: f64,
    /// Steps that exceeded `delta_max`.
    pub delta_warnings: usize,
    /// Wall-clock seconds; reported in [`ExperimentReport::timing`] only.
    #[serde(skip)]
    pub t_retrain_s: f64,
    #[serde(skip)]
    pub t_correct_s: f64,
    #[serde(skip)]
    pub t_offline_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedTrial {
    pub index: usize,
    pub seed: u64,
    pub error: String,
}

/// Summary statistics of one column; quantiles interpolate linearly
/// between order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub median: f64,
    pub q05: f64,
    pub q25: f64,
    pub q75: f64,
    pub q95: f64,
    pub min: f64,
    pub max: f64,
}

impl ColumnStats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                median: f64::NAN,
                q05: f64::NAN,
                q25: f64::NAN,
                q75: f64::NAN,
                q95: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |f: f64| {
            let pos = f * (s.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
        };
        Self {
            mean,
            median: q(0.5),
            q05: q(0.05),
            q25: q(0.25),
            q75: q(0.75),
            q95: q(0.95),
            min: s[0],
            max: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub completed: usize,
    pub skipped: usize,
    pub mae_corrupted: ColumnStats,
    pub mae_corrected: ColumnStats,
    pub cov_err_corrupted: ColumnStats,
    pub cov_err_corrected: ColumnStats,
    pub improvement_pct: ColumnStats,
    /// Trials where the corrected mean is strictly closer to the perfect one.
    pub corrected_wins: usize,
    pub win_fraction: f64,
}

impl Aggregates {
    pub fn of(trials: &[TrialResult], skipped: usize) -> Self {
        let col =
            |f: fn(&TrialResult) -> f64| ColumnStats::of(&trials.iter().map(f).collect::<Vec<_>>());
        let wins = trials
            .iter()
            .filter(|t| t.mae_corrected < t.mae_corrupted)
            .count();
        Self {
            completed: trials.len(),
            skipped,
            mae_corrupted: col(|t| t.mae_corrupted),
            mae_corrected: col(|t| t.mae_corrected),
            cov_err_corrupted: col(|t| t.cov_err_corrupted),
            cov_err_corrected: col(|t| t.cov_err_corrected),
            improvement_pct: col(|t| t.improvement_pct),
            corrected_wins: wins,
            win_fraction: if trials.is_empty() {
                f64::NAN
            } else {
                wins as f64 / trials.len() as f64
            },
        }
    }
}

/// Deterministic part of an [`ExperimentReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub trials: Vec<TrialResult>,
    pub aggregates: Aggregates,
    pub skipped: Vec<SkippedTrial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTiming {
    pub index: usize,
    pub t_retrain_s: f64,
    pub t_correct_s: f64,
    pub t_offline_s: f64,
}

/// Wall-clock measurements. Not reproducible between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSection {
    pub nondeterministic: bool,
    pub trials: Vec<TrialTiming>,
    pub retrain: ColumnStats,
    pub correct: ColumnStats,
    pub offline: ColumnStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub software_version: String,
    pub config: ExperimentConfig,
    pub results: Results,
    pub timing: TimingSection,
}

/// Everything computed in one trial, for plotting and inspection.
#[derive(Debug, Clone)]
pub struct TrialSnapshot {
    pub seed: u64,
    pub planned: Vec<Point>,
    pub actual: Vec<Point>,
    pub measurements: Vec<f64>,
    pub queries: QuerySet,
    /// Field values at the queries.
    pub truth: DVector<f64>,
    pub perfect: Prediction,
    pub corrupted: Prediction,
    pub corrected: CorrectedPrediction,
    pub steps: PerturbationSet,
    pub t_retrain_s: f64,
    pub t_correct_s: f64,
    pub t_offline_s: f64,
}

fn mae(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).abs().sum() / a.len() as f64
}

fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// Improvement of `corrected` over `corrupted`, in percent of `corrupted`;
/// zero when there was nothing to improve.
pub fn improvement_pct(mae_corrupted: f64, mae_corrected: f64) -> f64 {
    if mae_corrupted > 0.0 {
        100.0 * (mae_corrupted - mae_corrected) / mae_corrupted
    } else {
        0.0
    }
}

/// Runs trial `k` of `config` and keeps every intermediate.
pub fn run_trial_snapshot(config: &ExperimentConfig, k: usize) -> Result<TrialSnapshot> {
    let seed = trial_seed(config.base_seed, k as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = config.dim();
    let planned = config.planned.points()?;
    let queries = QuerySet::new(config.queries.points()?)?;

    let mut actual = Vec::with_capacity(planned.len());
    let mut steps = Vec::with_capacity(planned.len());
    let mut measurements = Vec::with_capacity(planned.len());
    for xh in &planned {
        let delta = config.perturbation.sample(&mut rng, p);
        let x = Point::new(xh.iter().zip(&delta).map(|(a, d)| a - d).collect());
        let noise: f64 = StandardNormal.sample(&mut rng);
        measurements.push(config.field.eval(&x) + config.measurement_noise_std * noise);
        steps.push(delta.iter().map(|d| -config.knowledge_factor * d).collect());
        actual.push(x);
    }
    let steps = PerturbationSet::new(steps).with_delta_max(config.effective_delta_max());

    let t0 = Instant::now();
    let perfect = retrain_oracle(
        config.kernel,
        actual.clone(),
        measurements.clone(),
        &queries,
    )?;
    let t_retrain_s = t0.elapsed().as_secs_f64();

    let corrupted_gp = train(
        config.kernel,
        Dataset::new(planned.clone(), measurements.clone())?,
    )?;
    let corrupted = corrupted_gp.predict(&queries)?;
    let t0 = Instant::now();
    let bundle = build_bundle(
        &corrupted_gp,
        &queries,
        config.mode == CorrectionMode::FullHessian,
    )?;
    let t_offline_s = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let corrected = correct(&corrupted, &bundle, &steps, config.mode)?;
    let t_correct_s = t0.elapsed().as_secs_f64();

    let truth = DVector::from_iterator(
        queries.len(),
        queries.points.iter().map(|q| config.field.eval(q)),
    );
    Ok(TrialSnapshot {
        seed,
        planned,
        actual,
        measurements,
        queries,
        truth,
        perfect,
        corrupted,
        corrected,
        steps,
        t_retrain_s,
        t_correct_s,
        t_offline_s,
    })
}

fn run_trial(config: &ExperimentConfig, k: usize) -> Result<TrialResult> {
    let s = run_trial_snapshot(config, k)?;
    let mae_corrupted = mae(&s.corrupted.mean, &s.perfect.mean);
    let mae_corrected = mae(&s.corrected.mean, &s.perfect.mean);
    Ok(TrialResult {
        index: k,
        seed: s.seed,
        mae_corrupted,
        mae_corrected,
        cov_err_corrupted: max_abs(&s.corrupted.covariance, &s.perfect.covariance),
        cov_err_corrected: max_abs(&s.corrected.covariance, &s.perfect.covariance),
        improvement_pct: improvement_pct(mae_corrupted, mae_corrected),
        delta_warnings: s.corrected.warnings.len(),
        t_retrain_s: s.t_retrain_s,
        t_correct_s: s.t_correct_s,
        t_offline_s: s.t_offline_s,
    })
}

/// Runs all trials (in parallel on the current rayon pool) and aggregates
/// them in trial order. Trials that fail numerically are skipped and listed.
pub fn run_replication(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let outcomes: Vec<Result<TrialResult>> = (0..config.trials)
        .into_par_iter()
        .map(|k| run_trial(config, k))
        .collect();

    let mut trials = Vec::with_capacity(outcomes.len());
    let mut skipped = Vec::new();
    for (k, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(t) => trials.push(t),
            Err(e @ (GpError::NotPositiveDefinite { .. } | GpError::ResourceLimit(_))) => {
                log::warn!("trial {k} skipped: {e}");
                skipped.push(SkippedTrial {
                    index: k,
                    seed: trial_seed(config.base_seed, k as u64),
                    error: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }

    let aggregates = Aggregates::of(&trials, skipped.len());
    let col =
        |f: fn(&TrialResult) -> f64| ColumnStats::of(&trials.iter().map(f).collect::<Vec<_>>());
    let timing = TimingSection {
        nondeterministic: true,
        trials: trials
            .iter()
            .map(|t| TrialTiming {
                index: t.index,
                t_retrain_s: t.t_retrain_s,
                t_correct_s: t.t_correct_s,
                t_offline_s: t.t_offline_s,
            })
            .collect(),
        retrain: col(|t| t.t_retrain_s),
        correct: col(|t| t.t_correct_s),
        offline: col(|t| t.t_offline_s),
    };
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        software_version: crate::VERSION.to_string(),
        config: config.clone(),
        results: Results {
            trials,
            aggregates,
            skipped,
        },
        timing,
    })
}

/// [`run_replication`] for a one-dimensional field.
pub fn run_1d_replication(config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.dim() != 1 {
        return Err(GpError::Invalid(format!(
            "1D replication needs a 1D field, got dimension {}",
            config.dim()
        )));
    }
    run_replication(config)
}

/// [`run_replication`] for a two-dimensional field.
pub fn run_2d_replication(config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.dim() != 2 {
        return Err(GpError::Invalid(format!(
            "2D replication needs a 2D field, got dimension {}",
            config.dim()
        )));
    }
    run_replication(config)
}
