//! Truncation-order bound and empirical remainder decay of the Taylor
//! correction.

use serde::{Deserialize, Serialize};

use crate::bundle::build_bundle;
use crate::correction::{correct, CorrectionMode, PerturbationSet};
use crate::error::{GpError, Result};
use crate::gp::{retrain_oracle, QuerySet, TrainedGP};
use crate::kernel::Point;

/// Inputs to [`required_order`]. `radius` bounds the distance from the
/// expansion point; it is unrelated to the kernel length scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub epsilon: f64,
    /// Uniform bound on the norm of the next-order derivative tensor.
    pub l_m: f64,
    pub radius: f64,
}

/// Number of Taylor terms `N = ceil(ln(epsilon / l_m) / ln(radius))`, floored
/// at zero.
///
/// The bound is only meaningful for `radius < 1`; `radius >= 1` is rejected.
/// `l_m` must be supplied by the caller. The finite-difference tensors from
/// [`crate::audit`] give a crude second-order probe of it.
pub fn required_order(inputs: BoundInputs) -> Result<u32> {
    let BoundInputs {
        epsilon,
        l_m,
        radius,
    } = inputs;
    if !(epsilon > 0.0 && l_m > 0.0 && radius > 0.0) || !epsilon.is_finite() || !l_m.is_finite() {
        return Err(GpError::Invalid(format!(
            "epsilon, l_m and radius must be positive and finite: {inputs:?}"
        )));
    }
    if radius >= 1.0 {
        return Err(GpError::InvalidRadius(radius));
    }
    if epsilon >= l_m {
        return Ok(0);
    }
    let n = ((epsilon / l_m).ln() / radius.ln()).ceil();
    Ok(n.max(0.0) as u32)
}

/// Gap between the corrected and the retrained mean at each scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderCurve {
    /// `(scale, max_abs_gap)` in the order the scales were given.
    pub points: Vec<(f64, f64)>,
    /// Least-squares slope of `ln gap` against `ln scale` over points with a
    /// positive scale and gap; `NaN` when fewer than two such points exist.
    pub slope: f64,
}

/// For each scale `s`, corrects the model with the step `s * direction` and
/// compares against a model retrained at `x̂ + s * direction`.
pub fn empirical_remainder(
    gp: &TrainedGP,
    queries: &QuerySet,
    direction: &PerturbationSet,
    scales: &[f64],
    mode: CorrectionMode,
) -> Result<RemainderCurve> {
    if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(GpError::Invalid(
            "scales must be finite and non-negative".into(),
        ));
    }
    if scales.windows(2).any(|w| w[1] > w[0]) {
        return Err(GpError::Invalid(
            "scales must be sorted in descending order".into(),
        ));
    }
    let bundle = build_bundle(gp, queries, mode == CorrectionMode::FullHessian)?;
    let base = gp.predict(queries)?;
    let planned = &gp.data().planned_inputs;

    let mut points = Vec::with_capacity(scales.len());
    for &s in scales {
        let step = direction.scaled(s);
        let corrected = correct(&base, &bundle, &step, mode)?;
        let actual: Vec<Point> = planned
            .iter()
            .zip(&step.deltas)
            .map(|(x, d)| Point::new(x.iter().zip(d).map(|(a, b)| a + b).collect()))
            .collect();
        let truth = retrain_oracle(
            *gp.params(),
            actual,
            gp.data().measurements.clone(),
            queries,
        )?;
        let gap = (&corrected.mean - &truth.mean).amax();
        points.push((s, gap));
    }
    let slope = loglog_slope(points.iter().copied());
    Ok(RemainderCurve { points, slope })
}

/// Least-squares slope of `ln y` against `ln x` over points with `x, y > 0`.
pub fn loglog_slope(points: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let logs: Vec<(f64, f64)> = points
        .into_iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return f64::NAN;
    }
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
