//! Kernel derivatives against central differences of `kernel_eval`.

use gpdelta_core::{kernel_eval, kernel_grad_b, kernel_grad_cross, kernel_hess_bb, KernelParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shifted(b: &[f64], j: usize, h: f64) -> Vec<f64> {
    let mut v = b.to_vec();
    v[j] += h;
    v
}

/// Largest `|a - r|` after scaling by `max(|r|, floor)`.
fn worst(pairs: impl IntoIterator<Item = (f64, f64)>, floor: f64) -> f64 {
    pairs
        .into_iter()
        .map(|(a, r)| (a - r).abs() / r.abs().max(floor))
        .fold(0.0, f64::max)
}

#[test]
fn two_hundred_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut g_err, mut h_err, mut h2_err, mut c_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for k in 0..200 {
        let p = 1 + k % 3;
        let params =
            KernelParams::new(rng.random_range(0.1..2.0), rng.random_range(0.1..1.0)).unwrap();
        let beta = params.length_scale;
        let a: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = a
            .iter()
            .map(|v| v + beta * rng.random_range(-1.5..1.5))
            .collect();
        let f = |x: &[f64]| kernel_eval(&params, &a, x).unwrap();
        // Near-zero floor: the natural scale of each derivative.
        let kscale = params.amplitude.powi(2);

        let h = 1e-5 * beta;
        let g = kernel_grad_b(&params, &a, &b).unwrap();
        let fd_g: Vec<f64> = (0..p)
            .map(|j| (f(&shifted(&b, j, h)) - f(&shifted(&b, j, -h))) / (2.0 * h))
            .collect();
        g_err = g_err.max(worst(g.iter().copied().zip(fd_g), 1e-5 * kscale / beta));

        // Hessian as differences of the (separately checked) gradient.
        let hess = kernel_hess_bb(&params, &a, &b).unwrap();
        for l in 0..p {
            let gp = kernel_grad_b(&params, &a, &shifted(&b, l, h)).unwrap();
            let gm = kernel_grad_b(&params, &a, &shifted(&b, l, -h)).unwrap();
            let fd = (0..p).map(|j| (hess[(j, l)], (gp[j] - gm[j]) / (2.0 * h)));
            h_err = h_err.max(worst(fd, 1e-5 * kscale / beta.powi(2)));
        }

        // Mixed second differences of kernel_eval itself. Round-off at step
        // 1e-5·β is ~1e-6 of the Hessian scale, so a wider step is used here.
        let h2 = 1e-3 * beta;
        for j in 0..p {
            for l in 0..p {
                let fd = if j == l {
                    (f(&shifted(&b, j, h2)) - 2.0 * f(&b) + f(&shifted(&b, j, -h2))) / (h2 * h2)
                } else {
                    let pp = f(&shifted(&shifted(&b, j, h2), l, h2));
                    let pm = f(&shifted(&shifted(&b, j, h2), l, -h2));
                    let mp = f(&shifted(&shifted(&b, j, -h2), l, h2));
                    let mm = f(&shifted(&shifted(&b, j, -h2), l, -h2));
                    (pp - pm - mp + mm) / (4.0 * h2 * h2)
                };
                h2_err = h2_err.max((hess[(j, l)] - fd).abs() / (kscale / beta.powi(2)));
            }
        }

        // d/da of grad_b, against differences in the first argument.
        let cross = kernel_grad_cross(&params, &a, &b).unwrap();
        for l in 0..p {
            let gp = kernel_grad_b(&params, &shifted(&a, l, h), &b).unwrap();
            let gm = kernel_grad_b(&params, &shifted(&a, l, -h), &b).unwrap();
            let fd = (0..p).map(|j| (cross[(j, l)], (gp[j] - gm[j]) / (2.0 * h)));
            c_err = c_err.max(worst(fd, 1e-5 * kscale / beta.powi(2)));
        }
    }
    println!("grad {g_err:.2e} hess {h_err:.2e} hess(2nd diff) {h2_err:.2e} cross {c_err:.2e}");
    assert!(g_err < 1e-5, "gradient {g_err}");
    assert!(h_err < 1e-5, "hessian {h_err}");
    assert!(h2_err < 1e-5, "hessian second differences {h2_err}");
    assert!(c_err < 1e-5, "cross {c_err}");
}

#[test]
fn distant_pairs_underflow_to_zero_without_nan() {
    let params = KernelParams::new(0.1, 0.05).unwrap();
    let (a, b) = ([-1.8, 0.0], [1.9, 0.0]);
    assert_eq!(kernel_eval(&params, &a, &b).unwrap(), 0.0);
    assert!(kernel_hess_bb(&params, &a, &b)
        .unwrap()
        .iter()
        .all(|v| *v == 0.0));
}

proptest! {
    #[test]
    fn kernel_is_symmetric_and_bounded(
        alpha in 0.1f64..3.0, beta in 0.05f64..2.0,
        a in prop::collection::vec(-2.0f64..2.0, 2),
        b in prop::collection::vec(-2.0f64..2.0, 2),
    ) {
        let params = KernelParams::new(alpha, beta).unwrap();
        let kab = kernel_eval(&params, &a, &b).unwrap();
        prop_assert_eq!(kab, kernel_eval(&params, &b, &a).unwrap());
        // Far-apart pairs underflow to exactly zero.
        prop_assert!((0.0..=alpha * alpha).contains(&kab));
        // Stationarity: the gradient in b is minus the gradient in a.
        let gb = kernel_grad_b(&params, &a, &b).unwrap();
        let ga = kernel_grad_b(&params, &b, &a).unwrap();
        for j in 0..2 {
            prop_assert!((gb[j] + ga[j]).abs() <= 1e-15 * alpha * alpha / beta);
        }
        let hb = kernel_hess_bb(&params, &a, &b).unwrap();
        let hc = kernel_grad_cross(&params, &a, &b).unwrap();
        prop_assert_eq!(hb.clone(), hb.transpose());
        prop_assert_eq!(hc, -hb);
    }
}
