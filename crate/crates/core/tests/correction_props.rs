//! Correction against the retrain oracle.

use gpdelta_core::audit::{random_instance, Instance};
use gpdelta_core::sim::{run_trial_snapshot, ExperimentConfig};
use gpdelta_core::{
    build_bundle, correct, retrain_oracle, train, CorrectedPrediction, CorrectionMode,
    PerturbationSet, Point, PointBlocks, Prediction,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn actual_inputs(inst: &Instance, steps: &PerturbationSet) -> Vec<Point> {
    inst.data
        .planned_inputs
        .iter()
        .zip(&steps.deltas)
        .map(|(x, d)| Point::new(x.iter().zip(d).map(|(a, b)| a + b).collect()))
        .collect()
}

fn truth(inst: &Instance, steps: &PerturbationSet) -> Prediction {
    retrain_oracle(
        inst.params,
        actual_inputs(inst, steps),
        inst.data.measurements.clone(),
        &inst.queries,
    )
    .unwrap()
}

fn mae(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).abs().sum() / a.len() as f64
}

#[test]
fn zero_steps_reproduce_the_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for k in 0..20 {
        let inst = random_instance(&mut rng, 3 + k % 10, 1 + k % 2, 1 + k % 15);
        let gp = train(inst.params, inst.data.clone()).unwrap();
        let pred = gp.predict(&inst.queries).unwrap();
        let bundle = build_bundle(&gp, &inst.queries, true).unwrap();
        let zero = PerturbationSet::zeros(gp.n(), gp.dim());
        for mode in [CorrectionMode::PaperDiag, CorrectionMode::FullHessian] {
            let c = correct(&pred, &bundle, &zero, mode).unwrap();
            assert!((&c.mean - &pred.mean).amax() <= 1e-15);
            assert!((&c.covariance - &pred.covariance).amax() <= 1e-15);
        }
        // Retraining at unchanged inputs is the same computation.
        assert_eq!(truth(&inst, &zero), pred);
    }
}

#[test]
fn replication_instance_is_improved() {
    let s = run_trial_snapshot(&ExperimentConfig::paper_1d(), 0).unwrap();
    let corrupted = mae(&s.corrupted.mean, &s.perfect.mean);
    let corrected = mae(&s.corrected.mean, &s.perfect.mean);
    assert!(corrected < corrupted, "{corrected} !< {corrupted}");
}

#[test]
fn replication_increments_equal_batch() {
    let cfg = ExperimentConfig::paper_1d();
    let s = run_trial_snapshot(&cfg, 3).unwrap();
    let gp = train(
        cfg.kernel,
        gpdelta_core::Dataset::new(s.planned.clone(), s.measurements.clone()).unwrap(),
    )
    .unwrap();
    let bundle = build_bundle(&gp, &s.queries, false).unwrap();
    let blocks = PointBlocks::from_bundle(&bundle);
    let mut a =
        CorrectedPrediction::begin(&s.corrupted, &bundle, CorrectionMode::PaperDiag).unwrap();
    let mut b = a.clone();
    for i in 0..11 {
        a.apply_increment(&bundle, i, &s.steps.deltas[i]).unwrap();
        b.apply_point(&blocks, 10 - i, &s.steps.deltas[10 - i])
            .unwrap();
    }
    for st in [&a, &b] {
        assert!((&st.mean - &s.corrected.mean).amax() <= 1e-12);
        assert!((&st.covariance - &s.corrected.covariance).amax() <= 1e-12);
    }
}

#[test]
fn single_point_remainder_is_third_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let inst = random_instance(&mut rng, 8, 1, 10);
        let gp = train(inst.params, inst.data.clone()).unwrap();
        let pred = gp.predict(&inst.queries).unwrap();
        let bundle = build_bundle(&gp, &inst.queries, true).unwrap();
        let mut dir = PerturbationSet::zeros(8, 1);
        dir.deltas[rng.random_range(0..8)][0] = 0.05 * inst.params.length_scale;
        let gap = |s: f64| {
            let step = dir.scaled(s);
            let diag = correct(&pred, &bundle, &step, CorrectionMode::PaperDiag).unwrap();
            let full = correct(&pred, &bundle, &step, CorrectionMode::FullHessian).unwrap();
            assert!((&diag.mean - &full.mean).amax() <= 1e-14 * pred.mean.amax().max(1.0));
            (&diag.mean - &truth(&inst, &step).mean).amax()
        };
        let ratio = gap(1.0) / gap(0.5);
        assert!((6.0..10.0).contains(&ratio), "halving ratio {ratio}");
    }
}

#[test]
fn contributions_add_over_disjoint_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let inst = random_instance(&mut rng, 10, 2, 8);
    let gp = train(inst.params, inst.data.clone()).unwrap();
    let pred = gp.predict(&inst.queries).unwrap();
    let bundle = build_bundle(&gp, &inst.queries, false).unwrap();
    let all: Vec<Vec<f64>> = (0..10)
        .map(|_| vec![rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02)])
        .collect();
    let pick = |keep: fn(usize) -> bool| {
        PerturbationSet::new(
            all.iter()
                .enumerate()
                .map(|(i, d)| if keep(i) { d.clone() } else { vec![0.0; 2] })
                .collect(),
        )
    };
    let run = |s: &PerturbationSet| correct(&pred, &bundle, s, CorrectionMode::PaperDiag).unwrap();
    let (a, b, u) = (
        run(&pick(|i| i % 3 == 0)),
        run(&pick(|i| i % 3 != 0)),
        run(&pick(|_| true)),
    );
    let mean_sum = &a.mean + &b.mean - &pred.mean;
    let cov_sum = &a.covariance + &b.covariance - &pred.covariance;
    assert!((&u.mean - mean_sum).amax() <= 1e-12);
    assert!((&u.covariance - cov_sum).amax() <= 1e-12);
    assert!(u.max_asymmetry <= 1e-9);
    assert_eq!(u.covariance, u.covariance.transpose());
}

#[test]
fn first_order_dominance_for_small_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let trials = 500;
    let mut wins = 0;
    for _ in 0..trials {
        let inst = random_instance(&mut rng, 11, 1, 20);
        let gp = train(inst.params, inst.data.clone()).unwrap();
        let pred = gp.predict(&inst.queries).unwrap();
        let bundle = build_bundle(&gp, &inst.queries, false).unwrap();
        let b = 0.05 * inst.params.length_scale;
        let steps = PerturbationSet::new((0..11).map(|_| vec![rng.random_range(-b..=b)]).collect());
        let c = correct(&pred, &bundle, &steps, CorrectionMode::PaperDiag).unwrap();
        let exact = truth(&inst, &steps);
        if mae(&c.mean, &exact.mean) <= mae(&pred.mean, &exact.mean) {
            wins += 1;
        }
    }
    println!("corrected at least as close in {wins}/{trials}");
    assert!(wins as f64 >= 0.99 * trials as f64);
}
