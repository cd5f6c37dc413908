//! Wall-clock comparison of retraining against the online correction.
//!
//! "Online" is the per-time-step update of the online phase: one point's
//! location estimate arrives and the prediction is updated with that point's
//! blocks ([`CorrectedPrediction::apply_point`]). The all-points batch
//! update ([`correct`]) is timed as well; its cost grows with `t²·n` because
//! it contracts every covariance block.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bundle::build_bundle;
use crate::correction::{
    correct, CorrectedPrediction, CorrectionMode, PerturbationSet, PointBlocks,
};
use crate::derivatives::MAX_TENSOR_ENTRIES;
use crate::error::{GpError, Result};
use crate::gp::{retrain_oracle, train, Dataset, QuerySet};
use crate::kernel::{KernelParams, Point};
use crate::remainder::loglog_slope;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    pub n_list: Vec<usize>,
    pub t_list: Vec<usize>,
    /// Timed repetitions per size; medians are reported.
    pub repeats: usize,
    pub kernel: KernelParams,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            n_list: vec![100, 200, 400],
            t_list: vec![100],
            repeats: 7,
            kernel: KernelParams {
                amplitude: 1.0,
                length_scale: 0.2,
                noise_std: 0.01,
                jitter: KernelParams::DEFAULT_JITTER,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub n: usize,
    pub t: usize,
    /// Median retrain on the actual inputs plus prediction.
    pub retrain_s: f64,
    /// Median of the training step alone (kernel matrix and factorization).
    pub train_s: f64,
    /// Median single-point update.
    pub online_s: f64,
    /// Median all-points update.
    pub batch_s: f64,
    /// Bundle build plus regrouping, once per model.
    pub offline_s: f64,
    pub speedup_online: f64,
    pub speedup_batch: f64,
}

/// Log-log slopes against `n` at one `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeSummary {
    pub t: usize,
    pub retrain: f64,
    pub train: f64,
    pub online: f64,
    pub batch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub config: TimingConfig,
    pub rows: Vec<TimingRow>,
    pub slopes: Vec<SlopeSummary>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn check_size(n: usize, t: usize) -> Result<()> {
    let entries = t.checked_mul(t).and_then(|v| v.checked_mul(2 * n));
    match entries {
        Some(e) if e <= MAX_TENSOR_ENTRIES => Ok(()),
        _ => Err(GpError::ResourceLimit(format!(
            "n = {n}, t = {t} needs covariance tensors beyond {MAX_TENSOR_ENTRIES} entries"
        ))),
    }
}

/// One-dimensional problem with `n` points spaced half a length scale apart
/// and `t` queries spread over the same interval.
fn problem(kernel: &KernelParams, n: usize, t: usize) -> (Dataset, Vec<Point>, QuerySet) {
    let h = 0.5 * kernel.length_scale;
    let x: Vec<Point> = (0..n).map(|i| Point::scalar(i as f64 * h)).collect();
    let span = (n.max(2) - 1) as f64 * h;
    let z = x
        .iter()
        .map(|p| (std::f64::consts::TAU * p[0]).sin())
        .collect();
    let actual = x
        .iter()
        .enumerate()
        .map(|(i, p)| Point::scalar(p[0] + 0.01 * h * ((i % 7) as f64 - 3.0)))
        .collect();
    let q = (0..t)
        .map(|e| {
            Point::scalar(if t == 1 {
                0.5 * span
            } else {
                span * e as f64 / (t - 1) as f64
            })
        })
        .collect();
    (
        Dataset::new(x, z).expect("valid"),
        actual,
        QuerySet::new(q).expect("valid"),
    )
}

fn time<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t0 = Instant::now();
    let out = f()?;
    Ok((out, t0.elapsed().as_secs_f64()))
}

pub fn run_timing_bench(config: &TimingConfig) -> Result<TimingTable> {
    config.kernel.validate()?;
    if config.repeats == 0 || config.n_list.is_empty() || config.t_list.is_empty() {
        return Err(GpError::Invalid(
            "timing bench needs sizes and at least one repeat".into(),
        ));
    }
    if config.n_list.contains(&0) || config.t_list.contains(&0) {
        return Err(GpError::Invalid("sizes must be positive".into()));
    }
    for &n in &config.n_list {
        for &t in &config.t_list {
            check_size(n, t)?;
        }
    }

    let mut rows = Vec::new();
    for &t in &config.t_list {
        for &n in &config.n_list {
            let (data, actual, queries) = problem(&config.kernel, n, t);
            let steps = PerturbationSet::new(
                actual
                    .iter()
                    .zip(&data.planned_inputs)
                    .map(|(a, b)| vec![a[0] - b[0]])
                    .collect(),
            );
            let gp = train(config.kernel, data.clone())?;
            let base = gp.predict(&queries)?;
            let ((bundle, blocks), offline_s) = time(|| {
                let b = build_bundle(&gp, &queries, false)?;
                let blocks = PointBlocks::from_bundle(&b);
                Ok((b, blocks))
            })?;

            let actual_data = Dataset::new(actual.clone(), data.measurements.clone())?;
            let mut retrain = Vec::with_capacity(config.repeats);
            let mut train_only = Vec::with_capacity(config.repeats);
            let mut batch = Vec::with_capacity(config.repeats);
            let mut online = Vec::with_capacity(config.repeats * n);
            for _ in 0..config.repeats {
                let (pred, s) = time(|| {
                    retrain_oracle(
                        config.kernel,
                        actual.clone(),
                        data.measurements.clone(),
                        &queries,
                    )
                })?;
                std::hint::black_box(pred);
                retrain.push(s);

                let (g, s) = time(|| train(config.kernel, actual_data.clone()))?;
                std::hint::black_box(g);
                train_only.push(s);

                let (c, s) = time(|| correct(&base, &bundle, &steps, CorrectionMode::PaperDiag))?;
                std::hint::black_box(c);
                batch.push(s);

                let mut state =
                    CorrectedPrediction::begin(&base, &bundle, CorrectionMode::PaperDiag)?;
                for (i, d) in steps.deltas.iter().enumerate() {
                    let ((), s) = time(|| state.apply_point(&blocks, i, d))?;
                    online.push(s);
                }
                std::hint::black_box(state);
            }
            let (retrain_s, online_s, batch_s) = (median(retrain), median(online), median(batch));
            rows.push(TimingRow {
                n,
                t,
                retrain_s,
                train_s: median(train_only),
                online_s,
                batch_s,
                offline_s,
                speedup_online: retrain_s / online_s,
                speedup_batch: retrain_s / batch_s,
            });
        }
    }

    let slopes = config
        .t_list
        .iter()
        .map(|&t| {
            let at_t: Vec<&TimingRow> = rows.iter().filter(|r| r.t == t).collect();
            let slope =
                |f: fn(&TimingRow) -> f64| loglog_slope(at_t.iter().map(|r| (r.n as f64, f(r))));
            SlopeSummary {
                t,
                retrain: slope(|r| r.retrain_s),
                train: slope(|r| r.train_s),
                online: slope(|r| r.online_s),
                batch: slope(|r| r.batch_s),
            }
        })
        .collect();
    Ok(TimingTable {
        config: config.clone(),
        rows,
        slopes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoke_single_point() {
        let cfg = TimingConfig {
            n_list: vec![1],
            t_list: vec![1],
            repeats: 2,
            ..Default::default()
        };
        let table = run_timing_bench(&cfg).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert!(table.rows[0].retrain_s > 0.0);
        assert!(table.slopes[0].retrain.is_nan());
    }

    #[test]
    fn oversized_request_is_a_resource_limit() {
        let cfg = TimingConfig {
            n_list: vec![100_000],
            t_list: vec![10_000],
            ..Default::default()
        };
        assert!(matches!(
            run_timing_bench(&cfg),
            Err(GpError::ResourceLimit(_))
        ));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
