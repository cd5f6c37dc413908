use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};

use std::f64::consts::PI;

/// Rule used to evaluate a [`FieldSpec::UserGrid`] between its nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Nearest,
    #[default]
    Multilinear,
}

/// Ground-truth scalar field sampled by the simulated agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
    /// `sin(2πx)` on `[0, 1]`.
    Sine1d,
    /// `sin(2πx)·cos(2πy)` on `[0, 1]²`.
    SineCosine2d,
    /// Values on a rectilinear grid. `axes[d]` holds the strictly increasing
    /// node coordinates of dimension `d`; `values` is row-major with the last
    /// axis fastest. Points outside the grid are clamped to its boundary.
    UserGrid {
        axes: Vec<Vec<f64>>,
        values: Vec<f64>,
        #[serde(default)]
        interpolation: Interpolation,
    },
}

impl FieldSpec {
    /// Input dimension the field is defined on.
    pub fn dim(&self) -> usize {
        match self {
            FieldSpec::Sine1d => 1,
            FieldSpec::SineCosine2d => 2,
            FieldSpec::UserGrid { axes, .. } => axes.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let FieldSpec::UserGrid { axes, values, .. } = self {
            if axes.is_empty() || axes.iter().any(|a| a.is_empty()) {
                return Err(GpError::Invalid(
                    "user grid needs at least one node per axis".into(),
                ));
            }
            for (d, a) in axes.iter().enumerate() {
                if a.iter().any(|v| !v.is_finite()) || a.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(GpError::Invalid(format!(
                        "user grid axis {d} must be finite and strictly increasing"
                    )));
                }
            }
            let expected: usize = axes.iter().map(Vec::len).product();
            if values.len() != expected {
                return Err(GpError::Dimension(format!(
                    "user grid has {} values, axes imply {expected}",
                    values.len()
                )));
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            FieldSpec::Sine1d => (2.0 * PI * x[0]).sin(),
            FieldSpec::SineCosine2d => (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos(),
            FieldSpec::UserGrid {
                axes,
                values,
                interpolation,
            } => eval_grid(axes, values, *interpolation, x),
        }
    }
}

/// Bracketing node index and weight of the upper node along one axis.
fn locate(axis: &[f64], v: f64) -> (usize, f64) {
    if axis.len() == 1 || v <= axis[0] {
        return (0, 0.0);
    }
    let last = axis.len() - 1;
    if v >= axis[last] {
        return (last - 1, 1.0);
    }
    let hi = axis.partition_point(|a| *a <= v);
    let lo = hi - 1;
    (lo, (v - axis[lo]) / (axis[hi] - axis[lo]))
}

fn eval_grid(axes: &[Vec<f64>], values: &[f64], rule: Interpolation, x: &[f64]) -> f64 {
    let dims = axes.len();
    let cells: Vec<(usize, f64)> = axes.iter().zip(x).map(|(a, &v)| locate(a, v)).collect();
    let strides: Vec<usize> = (0..dims)
        .map(|d| axes[d + 1..].iter().map(Vec::len).product())
        .collect();
    match rule {
        Interpolation::Nearest => {
            let idx: usize = cells
                .iter()
                .zip(&strides)
                .zip(axes)
                .map(|(((lo, w), s), a)| {
                    if a.len() > 1 && *w >= 0.5 {
                        (lo + 1) * s
                    } else {
                        lo * s
                    }
                })
                .sum();
            values[idx]
        }
        Interpolation::Multilinear => {
            let mut acc = 0.0;
            for corner in 0..(1usize << dims) {
                let mut weight = 1.0;
                let mut idx = 0;
                for d in 0..dims {
                    let (lo, w) = cells[d];
                    let upper = corner >> d & 1 == 1;
                    if axes[d].len() == 1 {
                        if upper {
                            weight = 0.0;
                        }
                        idx += lo * strides[d];
                        continue;
                    }
                    weight *= if upper { w } else { 1.0 - w };
                    idx += (lo + upper as usize) * strides[d];
                }
                if weight != 0.0 {
                    acc += weight * values[idx];
                }
            }
            acc
        }
    }
}
