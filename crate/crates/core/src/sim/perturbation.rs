use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};

/// Distribution of the location error `δ = x̂ − x` of one training point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationKind {
    /// Independent `U[low, high]` per affected coordinate.
    UniformInterval {
        low: f64,
        high: f64,
    },
    /// Independent `N(0, std²)` per affected coordinate.
    Gaussian {
        std: f64,
    },
    /// The same offset for every point; one entry per affected coordinate.
    ConstantOffset {
        offset: Vec<f64>,
    },
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationModel {
    #[serde(flatten)]
    pub kind: PerturbationKind,
    /// Zero-based coordinates that receive an error; the others are exact.
    pub affected_coords: Vec<usize>,
}

impl PerturbationModel {
    pub fn zero() -> Self {
        Self {
            kind: PerturbationKind::Zero,
            affected_coords: Vec::new(),
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if let Some(&c) = self.affected_coords.iter().find(|&&c| c >= p) {
            return Err(GpError::Invalid(format!(
                "affected coordinate {c} out of range for dimension {p}"
            )));
        }
        let mut sorted = self.affected_coords.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.affected_coords.len() {
            return Err(GpError::Invalid(
                "affected coordinates must be distinct".into(),
            ));
        }
        match &self.kind {
            PerturbationKind::UniformInterval { low, high } => {
                if !(low.is_finite() && high.is_finite() && low <= high) {
                    return Err(GpError::Invalid(format!(
                        "uniform interval [{low}, {high}] is not ordered"
                    )));
                }
            }
            PerturbationKind::Gaussian { std } => {
                if !(std.is_finite() && *std >= 0.0) {
                    return Err(GpError::Invalid(format!(
                        "gaussian std must be non-negative, got {std}"
                    )));
                }
            }
            PerturbationKind::ConstantOffset { offset } => {
                if offset.len() != self.affected_coords.len() {
                    return Err(GpError::Dimension(format!(
                        "offset has {} entries for {} affected coordinates",
                        offset.len(),
                        self.affected_coords.len()
                    )));
                }
                if offset.iter().any(|v| !v.is_finite()) {
                    return Err(GpError::Invalid("offset must be finite".into()));
                }
            }
            PerturbationKind::Zero => {}
        }
        Ok(())
    }

    /// Draws `δ` for one point of dimension `p`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, p: usize) -> Vec<f64> {
        let mut delta = vec![0.0; p];
        for (k, &c) in self.affected_coords.iter().enumerate() {
            delta[c] = match &self.kind {
                PerturbationKind::UniformInterval { low, high } => {
                    if low == high {
                        *low
                    } else {
                        rng.random_range(*low..=*high)
                    }
                }
                PerturbationKind::Gaussian { std } => {
                    Normal::new(0.0, *std).expect("validated").sample(rng)
                }
                PerturbationKind::ConstantOffset { offset } => offset[k],
                PerturbationKind::Zero => 0.0,
            };
        }
        delta
    }

    /// Largest `‖δ‖₂` the model can produce, if bounded.
    pub fn bound(&self) -> Option<f64> {
        let per = match &self.kind {
            PerturbationKind::UniformInterval { low, high } => low.abs().max(high.abs()),
            PerturbationKind::Gaussian { std } if *std > 0.0 => return None,
            PerturbationKind::Gaussian { .. } | PerturbationKind::Zero => 0.0,
            PerturbationKind::ConstantOffset { offset } => {
                return Some(offset.iter().map(|v| v * v).sum::<f64>().sqrt())
            }
        };
        Some(per * (self.affected_coords.len() as f64).sqrt())
    }
}
