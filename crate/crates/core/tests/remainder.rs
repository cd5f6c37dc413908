//! Empirical Taylor remainder decay.

use gpdelta_core::audit::random_instance;
use gpdelta_core::{
    empirical_remainder, required_order, train, BoundInputs, CorrectionMode, GpError,
    PerturbationSet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn bound_examples() {
    let l_m = 3.5;
    assert_eq!(
        required_order(BoundInputs {
            epsilon: 0.01 * l_m,
            l_m,
            radius: 0.5
        })
        .unwrap(),
        7
    );
    assert_eq!(
        required_order(BoundInputs {
            epsilon: l_m,
            l_m,
            radius: 0.5
        })
        .unwrap(),
        0
    );
    assert!(matches!(
        required_order(BoundInputs {
            epsilon: 0.1,
            l_m,
            radius: 1.0
        }),
        Err(GpError::InvalidRadius(_))
    ));
}

#[test]
fn slopes_on_random_1d_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let scales = [4e-3, 2e-3, 1e-3];
    for _ in 0..4 {
        let inst = random_instance(&mut rng, 8, 1, 12);
        let beta = inst.params.length_scale;
        let gp = train(inst.params, inst.data.clone()).unwrap();

        let mut single = PerturbationSet::zeros(8, 1);
        single.deltas[rng.random_range(0..8)][0] = beta;
        let all = PerturbationSet::new(
            (0..8)
                .map(|_| vec![if rng.random_bool(0.5) { beta } else { -beta }])
                .collect(),
        );

        let s1 = empirical_remainder(
            &gp,
            &inst.queries,
            &single,
            &scales,
            CorrectionMode::PaperDiag,
        )
        .unwrap();
        let full = empirical_remainder(
            &gp,
            &inst.queries,
            &all,
            &scales,
            CorrectionMode::FullHessian,
        )
        .unwrap();
        let diag =
            empirical_remainder(&gp, &inst.queries, &all, &scales, CorrectionMode::PaperDiag)
                .unwrap();
        println!(
            "single {:.2} full {:.2} diag {:.2}",
            s1.slope, full.slope, diag.slope
        );
        assert!(s1.slope >= 2.7);
        assert!(full.slope >= 2.5);
        assert!((1.7..=2.6).contains(&diag.slope));
        for curve in [&s1, &full, &diag] {
            assert!(curve.points.windows(2).all(|w| w[1].1 <= 1.05 * w[0].1));
        }
    }
}

#[test]
fn zero_scale_has_zero_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let inst = random_instance(&mut rng, 6, 2, 5);
    let gp = train(inst.params, inst.data.clone()).unwrap();
    let dir = PerturbationSet::new(vec![vec![0.1, -0.1]; 6]);
    let curve = empirical_remainder(
        &gp,
        &inst.queries,
        &dir,
        &[1e-2, 0.0],
        CorrectionMode::PaperDiag,
    )
    .unwrap();
    assert_eq!(curve.points[1], (0.0, 0.0));
    assert!(empirical_remainder(
        &gp,
        &inst.queries,
        &dir,
        &[1e-3, 1e-2],
        CorrectionMode::PaperDiag
    )
    .is_err());
}
