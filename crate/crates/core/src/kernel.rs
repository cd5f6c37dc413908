//! Squared-exponential kernel and its closed-form input derivatives.
//!
//! `k(a, b) = amplitude^2 * exp(-|a - b|^2 / (2 * length_scale^2))`
//!
//! All derivatives are taken with respect to the *second* argument unless
//! noted; the kernel is stationary, so the first-argument gradient is the
//! negation of the second-argument one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, GpError, Result};

/// Hyperparameters of the squared-exponential kernel plus the diagonal
/// regularization applied to training kernel matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub amplitude: f64,
    pub length_scale: f64,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_jitter() -> f64 {
    KernelParams::DEFAULT_JITTER
}

impl KernelParams {
    pub const DEFAULT_JITTER: f64 = 1e-10;

    pub fn new(amplitude: f64, length_scale: f64) -> Result<Self> {
        let p = Self {
            amplitude,
            length_scale,
            noise_std: 0.0,
            jitter: Self::DEFAULT_JITTER,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_noise(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.amplitude > 0.0
            && self.amplitude.is_finite()
            && self.length_scale > 0.0
            && self.length_scale.is_finite()
            && self.noise_std >= 0.0
            && self.noise_std.is_finite()
            && self.jitter >= 0.0
            && self.jitter.is_finite();
        if ok {
            Ok(())
        } else {
            Err(GpError::Invalid(format!(
                "kernel parameters out of range: {self:?} \
                 (need amplitude > 0, length_scale > 0, noise_std >= 0, jitter >= 0)"
            )))
        }
    }

    /// Value added to the diagonal of the training kernel matrix.
    pub fn diagonal_shift(&self) -> f64 {
        self.noise_std * self.noise_std + self.jitter
    }

    /// Prior variance `k(x, x)`.
    pub fn prior_variance(&self) -> f64 {
        self.amplitude * self.amplitude
    }
}

/// A location in the input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn scalar(x: f64) -> Self {
        Self(vec![x])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for Point {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(dim_err(format!(
            "kernel arguments have dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(dim_err("kernel arguments must have dimension >= 1"));
    }
    Ok(())
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Kernel value without dimension checks.
#[inline]
pub(crate) fn eval_raw(params: &KernelParams, a: &[f64], b: &[f64]) -> f64 {
    let l2 = params.length_scale * params.length_scale;
    params.prior_variance() * (-sq_dist(a, b) / (2.0 * l2)).exp()
}

/// Writes `dk/db` into `out` and returns the kernel value.
#[inline]
pub(crate) fn grad_b_raw(params: &KernelParams, a: &[f64], b: &[f64], out: &mut [f64]) -> f64 {
    let k = eval_raw(params, a, b);
    let inv_l2 = 1.0 / (params.length_scale * params.length_scale);
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = k * (x - y) * inv_l2;
    }
    k
}

/// Writes `d2k/db2` (row-major p x p) into `out` and returns the kernel value.
#[inline]
pub(crate) fn hess_bb_raw(params: &KernelParams, a: &[f64], b: &[f64], out: &mut [f64]) -> f64 {
    let p = a.len();
    let k = eval_raw(params, a, b);
    let inv_l2 = 1.0 / (params.length_scale * params.length_scale);
    let inv_l4 = inv_l2 * inv_l2;
    for r in 0..p {
        let dr = a[r] - b[r];
        for c in 0..p {
            let dc = a[c] - b[c];
            let eye = if r == c { inv_l2 } else { 0.0 };
            out[r * p + c] = k * (dr * dc * inv_l4 - eye);
        }
    }
    k
}

/// `k(a, b)`.
pub fn kernel_eval(params: &KernelParams, a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    Ok(eval_raw(params, a, b))
}

/// Gradient of `k(a, b)` with respect to `b`: `k(a, b) (a - b) / l^2`.
pub fn kernel_grad_b(params: &KernelParams, a: &[f64], b: &[f64]) -> Result<DVector<f64>> {
    check_dims(a, b)?;
    let mut out = DVector::zeros(a.len());
    grad_b_raw(params, a, b, out.as_mut_slice());
    Ok(out)
}

/// Hessian of `k(a, b)` with respect to `b`:
/// `k(a, b) [ (a - b)(a - b)^T / l^4 - I / l^2 ]`.
pub fn kernel_hess_bb(params: &KernelParams, a: &[f64], b: &[f64]) -> Result<DMatrix<f64>> {
    check_dims(a, b)?;
    let p = a.len();
    let mut buf = vec![0.0; p * p];
    hess_bb_raw(params, a, b, &mut buf);
    Ok(DMatrix::from_row_slice(p, p, &buf))
}

/// Mixed second derivative `d2k / da db`; equal to `-kernel_hess_bb(a, b)`.
/// Entry `(r, c)` differentiates with respect to `a[r]` and `b[c]`.
pub fn kernel_grad_cross(params: &KernelParams, a: &[f64], b: &[f64]) -> Result<DMatrix<f64>> {
    Ok(-kernel_hess_bb(params, a, b)?)
}
