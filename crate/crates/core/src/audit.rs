//! Finite-difference audit of the derivative tensors.
//!
//! The reference values come only from [`train`] and [`TrainedGP::predict`]:
//! every training coordinate is perturbed, the model is retrained and the
//! prediction is differenced. Nothing here touches the analytic assembly in
//! [`crate::derivatives`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::build_bundle;
use crate::error::Result;
use crate::gp::{train, Dataset, Prediction, QuerySet};
use crate::kernel::{KernelParams, Point};
use crate::tensor::Tensor;

/// A randomly drawn regression problem.
#[derive(Debug, Clone)]
pub struct Instance {
    pub params: KernelParams,
    pub data: Dataset,
    pub queries: QuerySet,
}

/// Draws amplitude in `[0.1, 2]`, length scale in `[0.1, 1]`, training and
/// query points uniformly in the unit cube (queries slightly beyond it), and
/// smooth measurements. `noise_std = 0.1 * amplitude` keeps the training
/// matrix well conditioned so the retrain differences are accurate.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, n: usize, p: usize, t: usize) -> Instance {
    let amplitude = rng.random_range(0.1..=2.0);
    let length_scale = rng.random_range(0.1..=1.0);
    let params = KernelParams {
        amplitude,
        length_scale,
        noise_std: 0.1 * amplitude,
        jitter: KernelParams::DEFAULT_JITTER,
    };
    let point = |rng: &mut R, lo: f64, hi: f64| {
        Point::new((0..p).map(|_| rng.random_range(lo..hi)).collect())
    };
    let x: Vec<Point> = (0..n).map(|_| point(rng, 0.0, 1.0)).collect();
    let phase: Vec<f64> = (0..p)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let z = x
        .iter()
        .map(|xi| {
            amplitude
                * xi.iter()
                    .zip(&phase)
                    .map(|(c, ph)| (4.0 * c + ph).sin())
                    .sum::<f64>()
        })
        .collect();
    let queries = (0..t).map(|_| point(rng, -0.1, 1.1)).collect();
    Instance {
        params,
        data: Dataset::new(x, z).expect("valid by construction"),
        queries: QuerySet::new(queries).expect("valid by construction"),
    }
}

fn predict_shifted(inst: &Instance, shifts: &[(usize, usize, f64)]) -> Result<Prediction> {
    let mut x = inst.data.planned_inputs.clone();
    for &(i, j, h) in shifts {
        x[i].0[j] += h;
    }
    let gp = train(
        inst.params,
        Dataset::new(x, inst.data.measurements.clone())?,
    )?;
    gp.predict(&inst.queries)
}

/// Central-difference Jacobians `(mean: (t, n, p), cov: (t, t, n, p))` of
/// the retrain pipeline with step `h`.
pub fn fd_jacobians(inst: &Instance, h: f64) -> Result<(Tensor, Tensor)> {
    let (n, p, t) = (inst.data.len(), inst.data.dim(), inst.queries.len());
    let mut mj = Tensor::zeros(&[t, n, p]);
    let mut cj = Tensor::zeros(&[t, t, n, p]);
    for i in 0..n {
        for j in 0..p {
            let fp = predict_shifted(inst, &[(i, j, h)])?;
            let fm = predict_shifted(inst, &[(i, j, -h)])?;
            for e in 0..t {
                mj.set(&[e, i, j], (fp.mean[e] - fm.mean[e]) / (2.0 * h));
                for e2 in 0..t {
                    let v = (fp.covariance[(e, e2)] - fm.covariance[(e, e2)]) / (2.0 * h);
                    cj.set(&[e, e2, i, j], v);
                }
            }
        }
    }
    Ok((mj, cj))
}

/// Second differences for the diagonal Hessian blocks
/// `(mean: (t, n, p, p), cov: (t, t, n, p, p))`.
pub fn fd_hessians_diag(inst: &Instance, h: f64) -> Result<(Tensor, Tensor)> {
    let (n, p, t) = (inst.data.len(), inst.data.dim(), inst.queries.len());
    let mut mh = Tensor::zeros(&[t, n, p, p]);
    let mut ch = Tensor::zeros(&[t, t, n, p, p]);
    let f0 = predict_shifted(inst, &[])?;
    for i in 0..n {
        for j in 0..p {
            for l in j..p {
                let (m, c) = second_difference(inst, &f0, (i, j), (i, l), h)?;
                for e in 0..t {
                    mh.set(&[e, i, j, l], m[e]);
                    mh.set(&[e, i, l, j], m[e]);
                    for e2 in 0..t {
                        ch.set(&[e, e2, i, j, l], c[(e, e2)]);
                        ch.set(&[e, e2, i, l, j], c[(e, e2)]);
                    }
                }
            }
        }
    }
    Ok((mh, ch))
}

/// Mixed second differences for the full mean Hessian `(t, n*p, n*p)`.
pub fn fd_mean_hessian_full(inst: &Instance, h: f64) -> Result<Tensor> {
    let (n, p, t) = (inst.data.len(), inst.data.dim(), inst.queries.len());
    let np = n * p;
    let mut out = Tensor::zeros(&[t, np, np]);
    let f0 = predict_shifted(inst, &[])?;
    for a in 0..np {
        for b in a..np {
            let (m, _) = second_difference(inst, &f0, (a / p, a % p), (b / p, b % p), h)?;
            for e in 0..t {
                out.set(&[e, a, b], m[e]);
                out.set(&[e, b, a], m[e]);
            }
        }
    }
    Ok(out)
}

type Coord = (usize, usize);

fn second_difference(
    inst: &Instance,
    f0: &Prediction,
    a: Coord,
    b: Coord,
    h: f64,
) -> Result<(nalgebra::DVector<f64>, nalgebra::DMatrix<f64>)> {
    if a == b {
        let fp = predict_shifted(inst, &[(a.0, a.1, h)])?;
        let fm = predict_shifted(inst, &[(a.0, a.1, -h)])?;
        let h2 = h * h;
        let m = (&fp.mean - 2.0 * &f0.mean + &fm.mean) / h2;
        let c = (&fp.covariance - 2.0 * &f0.covariance + &fm.covariance) / h2;
        Ok((m, c))
    } else {
        let s = |sa: f64, sb: f64| predict_shifted(inst, &[(a.0, a.1, sa * h), (b.0, b.1, sb * h)]);
        let (pp, pm, mp, mm) = (s(1.0, 1.0)?, s(1.0, -1.0)?, s(-1.0, 1.0)?, s(-1.0, -1.0)?);
        let d = 4.0 * h * h;
        let m = (&pp.mean - &pm.mean - &mp.mean + &mm.mean) / d;
        let c = (&pp.covariance - &pm.covariance - &mp.covariance + &mm.covariance) / d;
        Ok((m, c))
    }
}

/// Largest entrywise relative error of `analytic` against `reference`.
/// Entries whose reference magnitude is below `1e-3 * max|reference|` are
/// measured against that floor instead, so round-off at near-zero entries
/// does not dominate.
pub fn max_rel_error(analytic: &Tensor, reference: &Tensor) -> f64 {
    assert_eq!(analytic.dims(), reference.dims(), "tensor shapes differ");
    let floor = (1e-3 * reference.amax()).max(1e-300);
    analytic
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(a, r)| (a - r).abs() / r.abs().max(floor))
        .fold(0.0, f64::max)
}

/// Step sizes and tolerances for [`audit_instance`].
///
/// No single step suits every instance: round-off in the retrained
/// covariance grows like `1/h` (`1/h²` for second differences) while
/// truncation grows with `h` measured against the scale the posterior
/// varies on, which can sit well below the length scale. The references are
/// therefore Richardson-extrapolated central differences on the ladder
/// `step * 2^k`, `k = 0..=ladder`, and for each tensor the level that agrees
/// best with the next level is kept. The choice never looks at the analytic
/// tensors.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AuditSettings {
    /// Smallest Jacobian step, relative to the length scale.
    pub jacobian_step: f64,
    /// Smallest Hessian step, relative to the length scale.
    pub hessian_step: f64,
    /// Number of step doublings; `0` gives plain central differences.
    #[serde(default = "default_ladder")]
    pub ladder: usize,
    pub jacobian_tol: f64,
    pub hessian_tol: f64,
    /// Also audit the cross-block mean Hessian.
    pub full_hessian: bool,
}

fn default_ladder() -> usize {
    5
}

impl Default for AuditSettings {
    fn default() -> Self {
        Self {
            jacobian_step: 1e-4,
            hessian_step: 5e-4,
            ladder: default_ladder(),
            jacobian_tol: 1e-4,
            hessian_tol: 1e-3,
            full_hessian: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyResult {
    pub family: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub families: Vec<FamilyResult>,
    pub pass: bool,
}

impl AuditReport {
    /// Element-wise worst case of several reports.
    pub fn merge(reports: &[AuditReport]) -> AuditReport {
        let mut families: Vec<FamilyResult> = Vec::new();
        for r in reports {
            for f in &r.families {
                match families.iter_mut().find(|g| g.family == f.family) {
                    Some(g) => {
                        g.max_rel_error = g.max_rel_error.max(f.max_rel_error);
                        g.pass &= f.pass;
                    }
                    None => families.push(f.clone()),
                }
            }
        }
        let pass = families.iter().all(|f| f.pass);
        AuditReport { families, pass }
    }
}

/// Compares every tensor family of a freshly built bundle with retrain
/// finite differences.
pub fn audit_instance(inst: &Instance, settings: &AuditSettings) -> Result<AuditReport> {
    let gp = train(inst.params, inst.data.clone())?;
    let bundle = build_bundle(&gp, &inst.queries, settings.full_hessian)?;
    let beta = inst.params.length_scale;

    let ladder = settings.ladder;
    let jac = ladder_reference(settings.jacobian_step * beta, ladder, |h| {
        fd_jacobians(inst, h).map(|(m, c)| vec![m, c])
    })?;
    let hess = ladder_reference(settings.hessian_step * beta, ladder, |h| {
        fd_hessians_diag(inst, h).map(|(m, c)| vec![m, c])
    })?;
    let (fd_mj, fd_cj, fd_mh, fd_ch) = (&jac[0], &jac[1], &hess[0], &hess[1]);

    let mut families = vec![
        family(
            "mean_jacobian",
            &bundle.mean_derivs.jacobian,
            fd_mj,
            settings.jacobian_tol,
        ),
        family(
            "mean_hessian_diag",
            &bundle.mean_derivs.hessian_diag,
            fd_mh,
            settings.hessian_tol,
        ),
        family(
            "cov_jacobian",
            &bundle.cov_derivs.jacobian,
            fd_cj,
            settings.jacobian_tol,
        ),
        family(
            "cov_hessian_diag",
            &bundle.cov_derivs.hessian_diag,
            fd_ch,
            settings.hessian_tol,
        ),
    ];
    if let Some(full) = &bundle.mean_derivs.hessian_full {
        let fd = ladder_reference(settings.hessian_step * beta, ladder, |h| {
            fd_mean_hessian_full(inst, h).map(|m| vec![m])
        })?;
        families.push(family(
            "mean_hessian_full",
            full,
            &fd[0],
            settings.hessian_tol,
        ));
    }
    let pass = families.iter().all(|f| f.pass);
    Ok(AuditReport { families, pass })
}

/// References from [`AuditSettings`]'s step ladder. `eval(h)` returns
/// central differences at step `h`, one tensor per output.
pub fn ladder_reference(
    h0: f64,
    ladder: usize,
    mut eval: impl FnMut(f64) -> Result<Vec<Tensor>>,
) -> Result<Vec<Tensor>> {
    let raw = (0..=ladder)
        .map(|k| eval(h0 * f64::powi(2.0, k as i32)))
        .collect::<Result<Vec<_>>>()?;
    if ladder == 0 {
        return Ok(raw.into_iter().next().expect("one level"));
    }
    let gap = |a: &Tensor, b: &Tensor| {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    Ok((0..raw[0].len())
        .map(|j| {
            let rich: Vec<Tensor> = (0..ladder)
                .map(|k| richardson(&raw[k][j], &raw[k + 1][j]))
                .collect();
            let best = (0..rich.len().saturating_sub(1))
                .min_by(|&a, &b| {
                    gap(&rich[a], &rich[a + 1]).total_cmp(&gap(&rich[b], &rich[b + 1]))
                })
                .unwrap_or(0);
            rich[best].clone()
        })
        .collect())
}

/// `(4 fine - coarse) / 3` for central differences at `h` and `2h`.
pub fn richardson(fine: &Tensor, coarse: &Tensor) -> Tensor {
    let mut out = fine.clone();
    for (o, c) in out.as_mut_slice().iter_mut().zip(coarse.as_slice()) {
        *o = (4.0 * *o - c) / 3.0;
    }
    out
}

fn family(name: &str, analytic: &Tensor, reference: &Tensor, tol: f64) -> FamilyResult {
    let err = max_rel_error(analytic, reference);
    FamilyResult {
        family: name.to_string(),
        max_rel_error: err,
        tolerance: tol,
        pass: err < tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_error_uses_magnitude_floor() {
        let r = Tensor::from_vec(&[3], vec![1.0, 0.0, -2.0]).unwrap();
        let a = Tensor::from_vec(&[3], vec![1.0, 1e-6, -2.0]).unwrap();
        // floor = 2e-3
        assert!((max_rel_error(&a, &r) - 5e-4).abs() < 1e-15);
        assert_eq!(max_rel_error(&r, &r), 0.0);
    }
}
