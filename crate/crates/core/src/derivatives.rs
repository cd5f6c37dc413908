//! Offline phase: Jacobians and Hessians of the predictive mean and
//! covariance with respect to every training-input coordinate.
//!
//! Notation used below (all evaluated at the planned inputs):
//!
//! * `A = (K + shift I)^{-1}`, `w = A z`, `V = K_en A` (t x n), `c_i = V[:, i]`.
//! * For a coordinate `θ = (i, j)`:
//!   - `g_θ[e] = ∂k(x_e, x̂_i)/∂x̂_i^j`: the only nonzero column of `∂K_en/∂θ`,
//!   - `u_θ[b] = ∂k(x̂_b, x̂_i)/∂x̂_i^j` for `b != i`, `u_θ[i] = 0`, so that
//!     `∂K/∂θ = u_θ e_iᵀ + e_i u_θᵀ` (the diagonal `k(x̂_i, x̂_i)` is constant),
//!   - `d_θ = g_θ - V u_θ`, `s_θ = u_θ · w`.
//!
//! With these, `∂m/∂θ = w_i d_θ - s_θ c_i` and `∂S/∂θ = -(d_θ c_iᵀ + c_i d_θᵀ)`.
//! The second-order terms additionally need `γ_i = A_ii`, `β_θ = (A u_θ)_i` and
//! `μ_θφ = u_θᵀ A u_φ`, which are formed from `Y = L^{-1} U` and `Q = L^{-1}`
//! (triangular solves against the Cholesky factor) as Gram products.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{GpError, Result};
use crate::gp::{QuerySet, TrainedGP};
use crate::kernel::{grad_b_raw, hess_bb_raw};
use crate::tensor::Tensor;

/// Default cap on `n * p` for the full (cross-block) mean Hessian.
pub const DEFAULT_FULL_HESSIAN_LIMIT: usize = 2000;

/// Hard cap on the number of entries of any single tensor.
pub const MAX_TENSOR_ENTRIES: usize = 1 << 31;

/// Mean-derivative tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanDerivatives {
    /// `(t, n, p)`
    pub jacobian: Tensor,
    /// `(t, n, p, p)`: blocks `∂²m/∂x̂_i²`.
    pub hessian_diag: Tensor,
    /// `(t, n*p, n*p)`, index `i*p + j`; includes cross blocks.
    pub hessian_full: Option<Tensor>,
}

/// Covariance-derivative tensors; independent of the measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct CovDerivatives {
    /// `(t, t, n, p)`
    pub jacobian: Tensor,
    /// `(t, t, n, p, p)`
    pub hessian_diag: Tensor,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Order {
    First,
    Second,
}

/// Shared intermediates for one (model, query set) pair.
struct Precomp {
    n: usize,
    t: usize,
    p: usize,
    w: Vec<f64>,
    /// row-major t x n
    v: Vec<f64>,
    /// row-major t x (n p)
    d: Vec<f64>,
    /// n p
    s: Vec<f64>,
    second: Option<SecondOrder>,
}

struct SecondOrder {
    /// row-major t x (n p p): `h_θφ - V U_θφ` for the diagonal block of point i
    ht: Vec<f64>,
    /// n p p: `U_θφ · w`
    uw: Vec<f64>,
    /// n: `A_ii`
    gamma: Vec<f64>,
    /// n p: `(A u_θ)_i`
    beta: Vec<f64>,
    /// n p p: `u_θᵀ A u_φ` within the diagonal block
    mu: Vec<f64>,
    /// Only kept when cross blocks are requested.
    y: DMatrix<f64>,
    q: DMatrix<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn check_size(dims: &[usize]) -> Result<()> {
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&l| l <= MAX_TENSOR_ENTRIES);
    match len {
        Some(_) => Ok(()),
        None => Err(GpError::ResourceLimit(format!(
            "tensor of shape {dims:?} exceeds {MAX_TENSOR_ENTRIES} entries"
        ))),
    }
}

impl Precomp {
    fn new(gp: &TrainedGP, queries: &QuerySet, order: Order) -> Result<Self> {
        gp.check_queries(queries)?;
        let params = gp.params();
        let x = &gp.data().planned_inputs;
        let xe = &queries.points;
        let (n, t, p) = (x.len(), xe.len(), gp.dim());
        let np = n * p;
        let chol = gp.cholesky();

        let k_en = gp.cross_kernel(queries);
        // V^T = A K_ne
        let v = chol.solve(&k_en.transpose()).transpose();

        let mut g = DMatrix::zeros(t, np);
        let mut u = DMatrix::zeros(n, np);
        let mut buf = vec![0.0; p];
        for i in 0..n {
            for e in 0..t {
                grad_b_raw(params, &xe[e], &x[i], &mut buf);
                for j in 0..p {
                    g[(e, i * p + j)] = buf[j];
                }
            }
            for b in (0..n).filter(|&b| b != i) {
                grad_b_raw(params, &x[b], &x[i], &mut buf);
                for j in 0..p {
                    u[(b, i * p + j)] = buf[j];
                }
            }
        }
        let d = &g - &v * &u;
        let w = gp.weights();
        let s = u.tr_mul(w);

        let second = match order {
            Order::First => None,
            Order::Second => Some(SecondOrder::new(gp, queries, &v, &u)?),
        };

        Ok(Self {
            n,
            t,
            p,
            w: w.as_slice().to_vec(),
            v: row_major(&v),
            d: row_major(&d),
            s: s.as_slice().to_vec(),
            second,
        })
    }

    fn so(&self) -> &SecondOrder {
        self.second.as_ref().expect("second-order intermediates")
    }

    /// `ζ_θ = (A ∂K/∂θ w)_i = w_i β_θ + s_θ γ_i` for θ in block i.
    #[inline]
    fn zeta(&self, i: usize, theta: usize) -> f64 {
        let so = self.so();
        self.w[i] * so.beta[theta] + self.s[theta] * so.gamma[i]
    }

    fn mean_jacobian(&self) -> Result<Tensor> {
        let (n, t, p) = (self.n, self.t, self.p);
        let np = n * p;
        check_size(&[t, n, p])?;
        let mut out = Tensor::zeros(&[t, n, p]);
        out.as_mut_slice()
            .par_chunks_mut(np)
            .enumerate()
            .for_each(|(e, row)| {
                let d = &self.d[e * np..(e + 1) * np];
                let v = &self.v[e * n..(e + 1) * n];
                for (i, &vi) in v.iter().enumerate() {
                    for j in 0..p {
                        let th = i * p + j;
                        row[th] = self.w[i] * d[th] - vi * self.s[th];
                    }
                }
            });
        Ok(out)
    }

    #[allow(clippy::needless_range_loop)]
    fn mean_hessian_diag(&self) -> Result<Tensor> {
        let (n, t, p) = (self.n, self.t, self.p);
        let (np, pp) = (n * p, p * p);
        check_size(&[t, n, p, p])?;
        let so = self.so();
        let mut out = Tensor::zeros(&[t, n, p, p]);
        out.as_mut_slice()
            .par_chunks_mut(n * pp)
            .enumerate()
            .for_each(|(e, row)| {
                let d = &self.d[e * np..(e + 1) * np];
                let v = &self.v[e * n..(e + 1) * n];
                let ht = &so.ht[e * n * pp..(e + 1) * n * pp];
                for i in 0..n {
                    let wi = self.w[i];
                    for j in 0..p {
                        let th = i * p + j;
                        for l in 0..p {
                            let ph = i * p + l;
                            let blk = i * pp + j * p + l;
                            let scalar = 2.0 * wi * so.mu[blk]
                                + self.s[ph] * so.beta[th]
                                + self.s[th] * so.beta[ph]
                                - so.uw[blk];
                            row[blk] =
                                wi * ht[blk] - d[th] * self.zeta(i, ph) - d[ph] * self.zeta(i, th)
                                    + v[i] * scalar;
                        }
                    }
                }
            });
        Ok(out)
    }

    fn mean_hessian_full(&self, gp: &TrainedGP) -> Result<Tensor> {
        let (n, t, p) = (self.n, self.t, self.p);
        let np = n * p;
        check_size(&[t, np, np])?;
        let so = self.so();
        let params = gp.params();
        let x = &gp.data().planned_inputs;

        let m = so.y.tr_mul(&so.y); // u_θᵀ A u_φ
        let b = so.q.tr_mul(&so.y); // (A u_φ)_k, n x np
        let a = so.q.tr_mul(&so.q); // A

        // Mixed kernel derivative across distinct points: X[θ, φ] for i != k.
        let mut cross = vec![0.0; np * np];
        let mut hbuf = vec![0.0; p * p];
        for i in 0..n {
            for k in (0..n).filter(|&k| k != i) {
                hess_bb_raw(params, &x[i], &x[k], &mut hbuf);
                for j in 0..p {
                    for l in 0..p {
                        cross[(i * p + j) * np + k * p + l] = -hbuf[j * p + l];
                    }
                }
            }
        }

        let diag = self.mean_hessian_diag()?;
        let pp = p * p;
        let mut out = Tensor::zeros(&[t, np, np]);
        out.as_mut_slice()
            .par_chunks_mut(np * np)
            .enumerate()
            .for_each(|(e, blk)| {
                let d = &self.d[e * np..(e + 1) * np];
                let v = &self.v[e * n..(e + 1) * n];
                for th in 0..np {
                    let (i, j) = (th / p, th % p);
                    for ph in 0..np {
                        let (k, l) = (ph / p, ph % p);
                        blk[th * np + ph] = if i == k {
                            diag.as_slice()[(e * n + i) * pp + j * p + l]
                        } else {
                            let (wi, wk) = (self.w[i], self.w[k]);
                            let (st, sp) = (self.s[th], self.s[ph]);
                            let mtp = m[(th, ph)];
                            let zeta_pi = wk * b[(i, ph)] + sp * a[(i, k)];
                            let zeta_tk = wi * b[(k, th)] + st * a[(k, i)];
                            let x_tp = cross[th * np + ph];
                            -d[th] * zeta_pi - d[ph] * zeta_tk
                                + v[i] * (wk * mtp + sp * b[(k, th)])
                                + v[k] * (wi * mtp + st * b[(i, ph)])
                                - x_tp * (v[i] * wk + v[k] * wi)
                        };
                    }
                }
            });
        Ok(out)
    }

    fn cov_jacobian(&self) -> Result<Tensor> {
        let (n, t, p) = (self.n, self.t, self.p);
        let np = n * p;
        check_size(&[t, t, n, p])?;
        let mut out = Tensor::zeros(&[t, t, n, p]);
        out.as_mut_slice()
            .par_chunks_mut(t * np)
            .enumerate()
            .for_each(|(e1, slab)| {
                let d1 = &self.d[e1 * np..(e1 + 1) * np];
                let v1 = &self.v[e1 * n..(e1 + 1) * n];
                for (e2, row) in slab.chunks_exact_mut(np).enumerate() {
                    let d2 = &self.d[e2 * np..(e2 + 1) * np];
                    let v2 = &self.v[e2 * n..(e2 + 1) * n];
                    for i in 0..n {
                        for j in 0..p {
                            let th = i * p + j;
                            row[th] = -(d1[th] * v2[i] + v1[i] * d2[th]);
                        }
                    }
                }
            });
        Ok(out)
    }

    fn cov_hessian_diag(&self) -> Result<Tensor> {
        let (n, t, p) = (self.n, self.t, self.p);
        let (np, pp) = (n * p, p * p);
        check_size(&[t, t, n, p, p])?;
        let so = self.so();
        let mut out = Tensor::zeros(&[t, t, n, p, p]);
        out.as_mut_slice()
            .par_chunks_mut(t * n * pp)
            .enumerate()
            .for_each(|(e1, slab)| {
                let d1 = &self.d[e1 * np..(e1 + 1) * np];
                let v1 = &self.v[e1 * n..(e1 + 1) * n];
                let h1 = &so.ht[e1 * n * pp..(e1 + 1) * n * pp];
                for (e2, row) in slab.chunks_exact_mut(n * pp).enumerate() {
                    let d2 = &self.d[e2 * np..(e2 + 1) * np];
                    let v2 = &self.v[e2 * n..(e2 + 1) * n];
                    let h2 = &so.ht[e2 * n * pp..(e2 + 1) * n * pp];
                    for i in 0..n {
                        let (c1, c2) = (v1[i], v2[i]);
                        let gamma = so.gamma[i];
                        for j in 0..p {
                            let th = i * p + j;
                            for l in 0..p {
                                let ph = i * p + l;
                                let blk = i * pp + j * p + l;
                                let val = gamma * (d1[th] * d2[ph] + d1[ph] * d2[th])
                                    - so.beta[ph] * (d1[th] * c2 + c1 * d2[th])
                                    - so.beta[th] * (d1[ph] * c2 + c1 * d2[ph])
                                    + (h1[blk] * c2 + c1 * h2[blk])
                                    + 2.0 * so.mu[blk] * c1 * c2;
                                row[blk] = -val;
                            }
                        }
                    }
                }
            });
        Ok(out)
    }
}

impl SecondOrder {
    fn new(gp: &TrainedGP, queries: &QuerySet, v: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<Self> {
        let params = gp.params();
        let x = &gp.data().planned_inputs;
        let xe = &queries.points;
        let (n, t, p) = (x.len(), xe.len(), gp.dim());
        let pp = p * p;

        let mut hq = DMatrix::zeros(t, n * pp);
        let mut u2 = DMatrix::zeros(n, n * pp);
        let mut buf = vec![0.0; pp];
        for i in 0..n {
            for e in 0..t {
                hess_bb_raw(params, &xe[e], &x[i], &mut buf);
                for (c, val) in buf.iter().enumerate() {
                    hq[(e, i * pp + c)] = *val;
                }
            }
            for b in (0..n).filter(|&b| b != i) {
                hess_bb_raw(params, &x[b], &x[i], &mut buf);
                for (c, val) in buf.iter().enumerate() {
                    u2[(b, i * pp + c)] = *val;
                }
            }
        }
        let ht = hq - v * &u2;
        let uw = u2.tr_mul(gp.weights());

        let l = gp.cholesky().l_dirty();
        let mut y = u.clone();
        l.solve_lower_triangular_mut(&mut y);
        let mut q = DMatrix::identity(n, n);
        l.solve_lower_triangular_mut(&mut q);

        let gamma: Vec<f64> = (0..n).map(|i| q.column(i).norm_squared()).collect();
        let mut beta = vec![0.0; n * p];
        let mut mu = vec![0.0; n * pp];
        for i in 0..n {
            for j in 0..p {
                let yj = y.column(i * p + j);
                beta[i * p + j] = q.column(i).dot(&yj);
                for l in 0..p {
                    mu[i * pp + j * p + l] = yj.dot(&y.column(i * p + l));
                }
            }
        }
        Ok(Self {
            ht: row_major(&ht),
            uw: uw.as_slice().to_vec(),
            gamma,
            beta,
            mu,
            y,
            q,
        })
    }
}

/// `∂m_e/∂x̂_i^j`, shape `(t, n, p)`.
pub fn mean_jacobian(gp: &TrainedGP, queries: &QuerySet) -> Result<Tensor> {
    Precomp::new(gp, queries, Order::First)?.mean_jacobian()
}

/// `∂²m_e/∂x̂_i²` blocks, shape `(t, n, p, p)`.
pub fn mean_hessian_diag(gp: &TrainedGP, queries: &QuerySet) -> Result<Tensor> {
    Precomp::new(gp, queries, Order::Second)?.mean_hessian_diag()
}

/// Full mean Hessian per query, shape `(t, n*p, n*p)`. Fails with
/// `ResourceLimit` when `n * p` exceeds `limit`.
pub fn mean_hessian_full(gp: &TrainedGP, queries: &QuerySet, limit: usize) -> Result<Tensor> {
    check_full_gate(gp, limit)?;
    Precomp::new(gp, queries, Order::Second)?.mean_hessian_full(gp)
}

/// `∂S/∂x̂_i^j`, shape `(t, t, n, p)`.
pub fn cov_jacobian(gp: &TrainedGP, queries: &QuerySet) -> Result<Tensor> {
    Precomp::new(gp, queries, Order::First)?.cov_jacobian()
}

/// `∂²S/∂x̂_i²` blocks, shape `(t, t, n, p, p)`.
pub fn cov_hessian_diag(gp: &TrainedGP, queries: &QuerySet) -> Result<Tensor> {
    Precomp::new(gp, queries, Order::Second)?.cov_hessian_diag()
}

fn check_full_gate(gp: &TrainedGP, limit: usize) -> Result<()> {
    let np = gp.n() * gp.dim();
    if np > limit {
        return Err(GpError::ResourceLimit(format!(
            "full mean Hessian needs n*p = {np} <= {limit}"
        )));
    }
    Ok(())
}

pub(crate) fn assemble(
    gp: &TrainedGP,
    queries: &QuerySet,
    full_limit: Option<usize>,
) -> Result<(MeanDerivatives, CovDerivatives)> {
    if let Some(limit) = full_limit {
        check_full_gate(gp, limit)?;
    }
    let pre = Precomp::new(gp, queries, Order::Second)?;
    let mean = MeanDerivatives {
        jacobian: pre.mean_jacobian()?,
        hessian_diag: pre.mean_hessian_diag()?,
        hessian_full: match full_limit {
            Some(_) => Some(pre.mean_hessian_full(gp)?),
            None => None,
        },
    };
    let cov = CovDerivatives {
        jacobian: pre.cov_jacobian()?,
        hessian_diag: pre.cov_hessian_diag()?,
    };
    Ok((mean, cov))
}
