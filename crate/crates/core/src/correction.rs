//! Online phase: second-order Taylor update of a prediction given
//! per-point input steps.
//!
//! `deltas[i]` is the step from the expansion point (the planned input
//! `x̂_i`) towards the input the measurement was actually taken at, i.e.
//! `x_i - x̂_i`. Applying a bundle with this step moves the prediction toward
//! the model that would have been trained on the actual inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bundle::DerivativeBundle;
use crate::error::{dim_err, GpError, Result};
use crate::gp::Prediction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    /// Only the per-point Hessian blocks `∂²/∂x̂_i²`.
    #[default]
    PaperDiag,
    /// Adds the cross blocks `∂²/∂x̂_i∂x̂_k` (mean only; needs a bundle built
    /// with the full mean Hessian).
    FullHessian,
}

impl std::str::FromStr for CorrectionMode {
    type Err = GpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-diag" | "paper_diag" => Ok(Self::PaperDiag),
            "full-hessian" | "full_hessian" => Ok(Self::FullHessian),
            other => Err(GpError::Invalid(format!(
                "unknown correction mode '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for CorrectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PaperDiag => "paper-diag",
            Self::FullHessian => "full-hessian",
        })
    }
}

/// Per-point input steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSet {
    pub deltas: Vec<Vec<f64>>,
    /// Steps longer than this are flagged, not rejected.
    #[serde(default = "unbounded")]
    pub delta_max: f64,
}

fn unbounded() -> f64 {
    f64::INFINITY
}

impl PerturbationSet {
    pub fn new(deltas: Vec<Vec<f64>>) -> Self {
        Self {
            deltas,
            delta_max: f64::INFINITY,
        }
    }

    pub fn zeros(n: usize, p: usize) -> Self {
        Self::new(vec![vec![0.0; p]; n])
    }

    pub fn with_delta_max(mut self, delta_max: f64) -> Self {
        self.delta_max = delta_max;
        self
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            deltas: self
                .deltas
                .iter()
                .map(|d| d.iter().map(|v| v * s).collect())
                .collect(),
            delta_max: self.delta_max,
        }
    }

    fn validate(&self, n: usize, p: usize) -> Result<()> {
        if self.deltas.len() != n {
            return Err(dim_err(format!(
                "expected {n} perturbations, got {}",
                self.deltas.len()
            )));
        }
        if let Some(i) = self.deltas.iter().position(|d| d.len() != p) {
            return Err(dim_err(format!(
                "perturbation {i} has dimension {}, expected {p}",
                self.deltas[i].len()
            )));
        }
        if self.deltas.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GpError::Invalid(
                "perturbations contain non-finite values".into(),
            ));
        }
        Ok(())
    }
}

/// A step whose norm exceeded `delta_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaBoundWarning {
    pub index: usize,
    pub norm: f64,
    pub delta_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedPrediction {
    pub mean: DVector<f64>,
    /// Raw corrected covariance (symmetrized, not clamped).
    pub covariance: DMatrix<f64>,
    pub mode: CorrectionMode,
    pub applied_mask: Vec<bool>,
    pub warnings: Vec<DeltaBoundWarning>,
    /// Largest `|S_ab - S_ba|` seen before symmetrization.
    pub max_asymmetry: f64,
    /// Bound used to flag oversized steps.
    pub delta_max: f64,
}

impl CorrectedPrediction {
    /// Starting state for incremental updates: the uncorrected prediction
    /// with nothing applied.
    pub fn begin(
        prediction: &Prediction,
        bundle: &DerivativeBundle,
        mode: CorrectionMode,
    ) -> Result<Self> {
        check_compat(prediction, bundle, mode)?;
        Ok(Self {
            mean: prediction.mean.clone(),
            covariance: prediction.covariance.clone(),
            mode,
            applied_mask: vec![false; bundle.meta.n],
            warnings: Vec::new(),
            max_asymmetry: 0.0,
            delta_max: f64::INFINITY,
        })
    }

    pub fn with_delta_max(mut self, delta_max: f64) -> Self {
        self.delta_max = delta_max;
        self
    }

    /// Covariance with negative variances raised to zero.
    pub fn clamped_covariance(&self) -> DMatrix<f64> {
        let mut c = self.covariance.clone();
        for e in 0..c.nrows() {
            if c[(e, e)] < 0.0 {
                c[(e, e)] = 0.0;
            }
        }
        c
    }

    /// Fraction of query points whose raw corrected variance is negative.
    pub fn clamped_fraction(&self) -> f64 {
        let t = self.covariance.nrows();
        if t == 0 {
            return 0.0;
        }
        (0..t).filter(|&e| self.covariance[(e, e)] < 0.0).count() as f64 / t as f64
    }

    fn precheck(&mut self, shape: BundleShape, i: usize, delta_i: &[f64]) -> Result<()> {
        let BundleShape { n, t, p } = shape;
        if self.mode != CorrectionMode::PaperDiag {
            return Err(GpError::UnsupportedIncrementalMode);
        }
        if self.mean.len() != t || self.applied_mask.len() != n {
            return Err(dim_err("state does not match bundle"));
        }
        if i >= n {
            return Err(dim_err(format!(
                "training index {i} out of range (n = {n})"
            )));
        }
        if delta_i.len() != p {
            return Err(dim_err(format!(
                "perturbation has dimension {}, expected {p}",
                delta_i.len()
            )));
        }
        if self.applied_mask[i] {
            return Err(GpError::DoubleApply(i));
        }
        if let Some(w) = bound_warning(i, delta_i, self.delta_max) {
            self.warnings.push(w);
        }
        Ok(())
    }

    /// Adds the first- and second-order contribution of training point `i`.
    pub fn apply_increment(
        &mut self,
        bundle: &DerivativeBundle,
        i: usize,
        delta_i: &[f64],
    ) -> Result<()> {
        let BundleShape { n, t, p } = BundleShape::of(bundle);
        self.precheck(BundleShape { n, t, p }, i, delta_i)?;

        let mj = bundle.mean_derivs.jacobian.as_slice();
        let mh = bundle.mean_derivs.hessian_diag.as_slice();
        let cj = bundle.cov_derivs.jacobian.as_slice();
        let ch = bundle.cov_derivs.hessian_diag.as_slice();
        let pp = p * p;
        for e in 0..t {
            let jo = (e * n + i) * p;
            let ho = (e * n + i) * pp;
            self.mean[e] += point_term(&mj[jo..jo + p], &mh[ho..ho + pp], delta_i);
        }
        for e1 in 0..t {
            for e2 in 0..t {
                let jo = ((e1 * t + e2) * n + i) * p;
                let ho = ((e1 * t + e2) * n + i) * pp;
                self.covariance[(e1, e2)] += point_term(&cj[jo..jo + p], &ch[ho..ho + pp], delta_i);
            }
        }
        self.max_asymmetry = self.max_asymmetry.max(symmetrize(&mut self.covariance));
        self.applied_mask[i] = true;
        Ok(())
    }
}

/// Bundle blocks regrouped by training point, so that one point's update
/// reads a single contiguous slab instead of `t²` strided ones. Only the
/// upper triangle of the covariance blocks is kept.
#[derive(Debug, Clone)]
pub struct PointBlocks {
    n: usize,
    t: usize,
    p: usize,
    /// Per point: `t` records of `[jac (p), hess (p*p)]`.
    mean: Vec<f64>,
    /// Per point: `t(t+1)/2` records in column order `(r <= c)`.
    cov: Vec<f64>,
}

impl PointBlocks {
    pub fn from_bundle(bundle: &DerivativeBundle) -> Self {
        let BundleShape { n, t, p } = BundleShape::of(bundle);
        let (pp, rec) = (p * p, p + p * p);
        let tri = t * (t + 1) / 2;
        let mj = bundle.mean_derivs.jacobian.as_slice();
        let mh = bundle.mean_derivs.hessian_diag.as_slice();
        let cj = bundle.cov_derivs.jacobian.as_slice();
        let ch = bundle.cov_derivs.hessian_diag.as_slice();
        let mut mean = Vec::with_capacity(n * t * rec);
        let mut cov = Vec::with_capacity(n * tri * rec);
        for i in 0..n {
            for e in 0..t {
                mean.extend_from_slice(&mj[(e * n + i) * p..][..p]);
                mean.extend_from_slice(&mh[(e * n + i) * pp..][..pp]);
            }
            for c in 0..t {
                for r in 0..=c {
                    let s = r * t + c;
                    cov.extend_from_slice(&cj[(s * n + i) * p..][..p]);
                    cov.extend_from_slice(&ch[(s * n + i) * pp..][..pp]);
                }
            }
        }
        Self { n, t, p, mean, cov }
    }
}

impl CorrectedPrediction {
    /// [`apply_increment`](Self::apply_increment) reading from regrouped
    /// blocks. The covariance stays exactly symmetric.
    pub fn apply_point(&mut self, blocks: &PointBlocks, i: usize, delta_i: &[f64]) -> Result<()> {
        let PointBlocks { n, t, p, .. } = *blocks;
        self.precheck(BundleShape { n, t, p }, i, delta_i)?;
        let rec = p + p * p;
        let mean = &blocks.mean[i * t * rec..(i + 1) * t * rec];
        for (e, r) in mean.chunks_exact(rec).enumerate() {
            self.mean[e] += point_term(&r[..p], &r[p..], delta_i);
        }
        let tri = t * (t + 1) / 2;
        let slab = &blocks.cov[i * tri * rec..(i + 1) * tri * rec];
        let cov = self.covariance.as_mut_slice();
        let mut start = 0;
        for c in 0..t {
            let col = &slab[start * rec..(start + c + 1) * rec];
            start += c + 1;
            if p == 1 {
                let (d, hd) = (delta_i[0], 0.5 * delta_i[0] * delta_i[0]);
                for (r, b) in col.chunks_exact(2).enumerate() {
                    let v = b[0] * d + b[1] * hd;
                    cov[c * t + r] += v;
                    cov[r * t + c] += v;
                }
            } else {
                for (r, b) in col.chunks_exact(rec).enumerate() {
                    let v = point_term(&b[..p], &b[p..], delta_i);
                    cov[c * t + r] += v;
                    cov[r * t + c] += v;
                }
            }
            // The diagonal entry was added twice above.
            let b = &col[c * rec..];
            cov[c * t + c] -= point_term(&b[..p], &b[p..rec], delta_i);
        }
        self.applied_mask[i] = true;
        Ok(())
    }
}

struct BundleShape {
    n: usize,
    t: usize,
    p: usize,
}

impl BundleShape {
    fn of(b: &DerivativeBundle) -> Self {
        Self {
            n: b.meta.n,
            t: b.meta.t,
            p: b.meta.p,
        }
    }
}

/// `J·δ + ½ δᵀ H δ` for one point's slice.
#[inline]
fn point_term(jac: &[f64], hess: &[f64], delta: &[f64]) -> f64 {
    let p = delta.len();
    let mut lin = 0.0;
    let mut quad = 0.0;
    for j in 0..p {
        lin += jac[j] * delta[j];
        let row = &hess[j * p..(j + 1) * p];
        let hd: f64 = row.iter().zip(delta).map(|(h, d)| h * d).sum();
        quad += delta[j] * hd;
    }
    lin + 0.5 * quad
}

fn bound_warning(i: usize, delta: &[f64], delta_max: f64) -> Option<DeltaBoundWarning> {
    let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
    (norm > delta_max).then(|| {
        log::warn!("perturbation {i} has norm {norm:.3e} > delta_max {delta_max:.3e}");
        DeltaBoundWarning {
            index: i,
            norm,
            delta_max,
        }
    })
}

/// `S <- (S + Sᵀ)/2`; returns the largest asymmetry removed.
fn symmetrize(s: &mut DMatrix<f64>) -> f64 {
    let t = s.nrows();
    let mut worst: f64 = 0.0;
    for c in 0..t {
        for r in 0..c {
            let (a, b) = (s[(r, c)], s[(c, r)]);
            worst = worst.max((a - b).abs());
            let m = 0.5 * (a + b);
            s[(r, c)] = m;
            s[(c, r)] = m;
        }
    }
    worst
}

fn check_compat(
    prediction: &Prediction,
    bundle: &DerivativeBundle,
    mode: CorrectionMode,
) -> Result<()> {
    bundle.check_inputs(&prediction.planned_inputs_digest)?;
    let t = bundle.meta.t;
    if prediction.mean.len() != t || prediction.covariance.shape() != (t, t) {
        return Err(GpError::StaleBundle(format!(
            "bundle has {t} query points, prediction has {}",
            prediction.mean.len()
        )));
    }
    if mode == CorrectionMode::FullHessian && !bundle.has_full_hessian() {
        return Err(GpError::Invalid(
            "full-hessian mode needs a bundle built with the full mean Hessian".into(),
        ));
    }
    Ok(())
}

/// Applies the bundle to `prediction` for all perturbations at once.
pub fn correct(
    prediction: &Prediction,
    bundle: &DerivativeBundle,
    perturbations: &PerturbationSet,
    mode: CorrectionMode,
) -> Result<CorrectedPrediction> {
    check_compat(prediction, bundle, mode)?;
    let BundleShape { n, t, p } = BundleShape::of(bundle);
    perturbations.validate(n, p)?;
    let np = n * p;
    let pp = p * p;
    let flat: Vec<f64> = perturbations.deltas.iter().flatten().copied().collect();
    let warnings: Vec<_> = perturbations
        .deltas
        .iter()
        .enumerate()
        .filter_map(|(i, d)| bound_warning(i, d, perturbations.delta_max))
        .collect();

    let mj = bundle.mean_derivs.jacobian.as_slice();
    let mh = bundle.mean_derivs.hessian_diag.as_slice();
    let slab_term = |jac: &[f64], hess: &[f64]| -> f64 {
        (0..n)
            .map(|i| {
                point_term(
                    &jac[i * p..(i + 1) * p],
                    &hess[i * pp..(i + 1) * pp],
                    &flat[i * p..(i + 1) * p],
                )
            })
            .sum()
    };

    let mut mean = prediction.mean.clone();
    match mode {
        CorrectionMode::PaperDiag => {
            for e in 0..t {
                mean[e] += slab_term(&mj[e * np..(e + 1) * np], &mh[e * n * pp..(e + 1) * n * pp]);
            }
        }
        CorrectionMode::FullHessian => {
            let full = bundle
                .mean_derivs
                .hessian_full
                .as_ref()
                .expect("checked above")
                .as_slice();
            for e in 0..t {
                let jac = &mj[e * np..(e + 1) * np];
                let hess = &full[e * np * np..(e + 1) * np * np];
                let lin: f64 = jac.iter().zip(&flat).map(|(j, d)| j * d).sum();
                let quad: f64 = (0..np)
                    .map(|a| {
                        let row = &hess[a * np..(a + 1) * np];
                        flat[a] * row.iter().zip(&flat).map(|(h, d)| h * d).sum::<f64>()
                    })
                    .sum();
                mean[e] += lin + 0.5 * quad;
            }
        }
    }

    let cj = bundle.cov_derivs.jacobian.as_slice();
    let ch = bundle.cov_derivs.hessian_diag.as_slice();
    let mut covariance = prediction.covariance.clone();
    for e1 in 0..t {
        for e2 in 0..t {
            let s = e1 * t + e2;
            covariance[(e1, e2)] +=
                slab_term(&cj[s * np..(s + 1) * np], &ch[s * n * pp..(s + 1) * n * pp]);
        }
    }
    let max_asymmetry = symmetrize(&mut covariance);

    let out = CorrectedPrediction {
        mean,
        covariance,
        mode,
        applied_mask: vec![true; n],
        warnings,
        max_asymmetry,
        delta_max: perturbations.delta_max,
    };
    let clamped = out.clamped_fraction();
    if clamped > 0.0 {
        log::info!(
            "{:.1}% of corrected variances are negative",
            100.0 * clamped
        );
    }
    Ok(out)
}

/// Functional form of [`CorrectedPrediction::apply_increment`].
pub fn apply_increment(
    mut state: CorrectedPrediction,
    bundle: &DerivativeBundle,
    i: usize,
    delta_i: &[f64],
) -> Result<CorrectedPrediction> {
    state.apply_increment(bundle, i, delta_i)?;
    Ok(state)
}
