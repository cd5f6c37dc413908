//! Shared fixtures for the benchmarks.

use gpdelta_core::{train, Dataset, KernelParams, PerturbationSet, Point, QuerySet, TrainedGP};

/// A trained model with its queries and location errors.
pub struct Fixture {
    pub gp: TrainedGP,
    pub queries: QuerySet,
    pub actual: Vec<Point>,
    pub steps: PerturbationSet,
}

pub fn kernel() -> KernelParams {
    KernelParams::new(1.0, 0.2).expect("valid").with_noise(0.01)
}

/// `n` training points on a `p`-dimensional diagonal line spaced half a
/// length scale apart, `t` queries spread over the same span, and small
/// deterministic location errors.
pub fn fixture(n: usize, t: usize, p: usize) -> Fixture {
    let params = kernel();
    let h = 0.5 * params.length_scale;
    let line = |s: f64| Point::new((0..p).map(|j| s + 0.01 * j as f64).collect());
    let planned: Vec<Point> = (0..n).map(|i| line(i as f64 * h)).collect();
    let z = planned
        .iter()
        .map(|x| (std::f64::consts::TAU * x[0]).sin())
        .collect();
    let steps: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..p)
                .map(|j| 0.01 * h * (((i + j) % 7) as f64 - 3.0))
                .collect()
        })
        .collect();
    let actual = planned
        .iter()
        .zip(&steps)
        .map(|(x, d)| Point::new(x.iter().zip(d).map(|(a, b)| a + b).collect()))
        .collect();
    let span = (n.max(2) - 1) as f64 * h;
    let queries = (0..t)
        .map(|e| line(span * e as f64 / t.max(2) as f64))
        .collect();
    Fixture {
        gp: train(params, Dataset::new(planned, z).expect("valid")).expect("trains"),
        queries: QuerySet::new(queries).expect("valid"),
        actual,
        steps: PerturbationSet::new(steps),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shapes() {
        let f = fixture(7, 5, 2);
        assert_eq!(
            (f.gp.n(), f.gp.dim(), f.queries.len(), f.steps.len()),
            (7, 2, 5, 7)
        );
    }
}
