//! GP training and batch prediction.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dim_err, GpError, Result};
use crate::kernel::{eval_raw, KernelParams, Point};

/// Planned training inputs with their measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub planned_inputs: Vec<Point>,
    pub measurements: Vec<f64>,
}

impl Dataset {
    pub fn new(planned_inputs: Vec<Point>, measurements: Vec<f64>) -> Result<Self> {
        let d = Self {
            planned_inputs,
            measurements,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.planned_inputs.is_empty() {
            return Err(GpError::Invalid("training set is empty".into()));
        }
        if self.measurements.len() != self.planned_inputs.len() {
            return Err(dim_err(format!(
                "{} training inputs but {} measurements",
                self.planned_inputs.len(),
                self.measurements.len()
            )));
        }
        uniform_dim(&self.planned_inputs, "training inputs")?;
        if self
            .planned_inputs
            .iter()
            .flat_map(|p| p.iter())
            .chain(&self.measurements)
            .any(|v| !v.is_finite())
        {
            return Err(GpError::Invalid(
                "training data contains non-finite values".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.planned_inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planned_inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.planned_inputs[0].dim()
    }
}

/// Query locations at which the GP is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuerySet {
    pub points: Vec<Point>,
}

impl QuerySet {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(GpError::Invalid("query set is empty".into()));
        }
        uniform_dim(&points, "query points")?;
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }
}

fn uniform_dim(points: &[Point], what: &str) -> Result<usize> {
    let p = points[0].dim();
    if p == 0 {
        return Err(dim_err(format!("{what} must have dimension >= 1")));
    }
    if let Some(bad) = points.iter().position(|x| x.dim() != p) {
        return Err(dim_err(format!(
            "{what}: point {bad} has dimension {}, expected {p}",
            points[bad].dim()
        )));
    }
    Ok(p)
}

/// SHA-256 over the dimension, count and little-endian coordinates of a
/// point list. Used to tie derivative bundles to the inputs they were built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputDigest(#[serde(with = "hex_bytes")] pub [u8; 32]);

impl InputDigest {
    pub fn of_points(points: &[Point]) -> Self {
        let mut h = Sha256::new();
        let p = points.first().map_or(0, Point::dim) as u64;
        h.update(p.to_le_bytes());
        h.update((points.len() as u64).to_le_bytes());
        for x in points {
            for c in x.iter() {
                h.update(c.to_le_bytes());
            }
        }
        Self(h.finalize().into())
    }

    pub fn of_values(values: &[f64]) -> Self {
        let mut h = Sha256::new();
        h.update((values.len() as u64).to_le_bytes());
        for v in values {
            h.update(v.to_le_bytes());
        }
        Self(h.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl std::fmt::Display for InputDigest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

mod hex_bytes {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(&s).map_err(D::Error::custom)?;
        v.try_into()
            .map_err(|_| D::Error::custom("digest must be 32 bytes"))
    }
}

/// A GP conditioned on a dataset. Immutable after construction.
#[derive(Debug, Clone)]
pub struct TrainedGP {
    params: KernelParams,
    data: Dataset,
    chol: Cholesky<f64, Dyn>,
    weights: DVector<f64>,
    digest: InputDigest,
}

/// Training kernel matrix `K(X, X) + shift * I`.
pub(crate) fn regularized_kernel_matrix(params: &KernelParams, x: &[Point]) -> DMatrix<f64> {
    let n = x.len();
    let diag = params.prior_variance() + params.diagonal_shift();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = diag;
        for i in (j + 1)..n {
            let v = eval_raw(params, &x[i], &x[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cross kernel matrix with rows indexed by `rows` and columns by `cols`.
pub(crate) fn cross_kernel_matrix(
    params: &KernelParams,
    rows: &[Point],
    cols: &[Point],
) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
        eval_raw(params, &rows[r], &cols[c])
    })
}

/// Conditions the GP on `data`: factorizes the regularized training kernel
/// matrix and precomputes the weights `(K + shift I)^{-1} z`.
pub fn train(params: KernelParams, data: Dataset) -> Result<TrainedGP> {
    params.validate()?;
    data.validate()?;
    let k = regularized_kernel_matrix(&params, &data.planned_inputs);
    let chol = Cholesky::new(k).ok_or(GpError::NotPositiveDefinite {
        shift: params.diagonal_shift(),
    })?;
    let z = DVector::from_column_slice(&data.measurements);
    let weights = chol.solve(&z);
    let digest = InputDigest::of_points(&data.planned_inputs);
    Ok(TrainedGP {
        params,
        data,
        chol,
        weights,
        digest,
    })
}

/// Predictive mean and covariance at a query set.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Digest of the training inputs of the model that produced this prediction.
    pub planned_inputs_digest: InputDigest,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn variances(&self) -> DVector<f64> {
        self.covariance.diagonal()
    }
}

const NEGATIVE_VARIANCE_TOL: f64 = 1e-10;

impl TrainedGP {
    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    /// Lower-triangular factor `L` with `L L^T = K + shift I`.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn digest(&self) -> InputDigest {
        self.digest
    }

    pub(crate) fn check_queries(&self, queries: &QuerySet) -> Result<()> {
        if queries.dim() != self.dim() {
            return Err(dim_err(format!(
                "query dimension {} does not match training dimension {}",
                queries.dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Cross kernel `K(queries, X)` (t x n).
    pub fn cross_kernel(&self, queries: &QuerySet) -> DMatrix<f64> {
        cross_kernel_matrix(&self.params, &queries.points, &self.data.planned_inputs)
    }

    pub fn predict(&self, queries: &QuerySet) -> Result<Prediction> {
        self.check_queries(queries)?;
        let t = queries.len();
        let k_en = self.cross_kernel(queries);
        let mean = &k_en * &self.weights;

        // W = L^{-1} K_ne, so K_en K^{-1} K_ne = W^T W.
        let mut w = k_en.transpose();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut w);
        let reduction = w.tr_mul(&w);

        let mut cov = DMatrix::zeros(t, t);
        for c in 0..t {
            for r in 0..=c {
                let prior = eval_raw(&self.params, &queries.points[r], &queries.points[c]);
                let v = prior - reduction[(r, c)];
                cov[(r, c)] = v;
                cov[(c, r)] = v;
            }
        }
        for e in 0..t {
            let v = cov[(e, e)];
            if v < 0.0 {
                if v < -NEGATIVE_VARIANCE_TOL {
                    log::warn!("predictive variance {v:e} at query {e} below tolerance; clamping");
                }
                cov[(e, e)] = 0.0;
            }
        }
        Ok(Prediction {
            mean,
            covariance: cov,
            planned_inputs_digest: self.digest,
        })
    }
}

/// Trains on `actual_inputs` and predicts at `queries`: the exact
/// comparator for any Taylor-corrected prediction.
pub fn retrain_oracle(
    params: KernelParams,
    actual_inputs: Vec<Point>,
    measurements: Vec<f64>,
    queries: &QuerySet,
) -> Result<Prediction> {
    let gp = train(params, Dataset::new(actual_inputs, measurements)?)?;
    gp.predict(queries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<Point> {
        (0..n)
            .map(|i| Point::scalar(i as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn scalar_training_set() {
        let params = KernelParams::new(1.0, 1.0).unwrap().with_jitter(1e-10);
        let gp = train(
            params,
            Dataset::new(vec![Point::scalar(0.3)], vec![2.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(gp.chol_factor()[(0, 0)], (1.0f64 + 1e-10).sqrt());
        assert!((gp.weights()[0] - 2.0 / (1.0 + 1e-10)).abs() < 1e-15);
    }

    #[test]
    fn replication_grid_factorizes() {
        let params = KernelParams::new(0.1, 0.2).unwrap();
        let x = grid(11);
        let z = x
            .iter()
            .map(|p| (2.0 * std::f64::consts::PI * p[0]).sin())
            .collect();
        let gp = train(params, Dataset::new(x, z).unwrap()).unwrap();
        let l = gp.chol_factor();
        let k = regularized_kernel_matrix(&params, &gp.data().planned_inputs);
        let rec = &l * l.transpose();
        assert!((rec - &k).amax() <= 1e-10 * k.amax());
    }

    #[test]
    fn duplicate_points_without_regularization_fail() {
        let params = KernelParams::new(1.0, 1.0).unwrap().with_jitter(0.0);
        let x = vec![Point::scalar(0.5), Point::scalar(0.5), Point::scalar(0.9)];
        let res = train(params, Dataset::new(x, vec![1.0, 1.0, 0.0]).unwrap());
        assert!(matches!(res, Err(GpError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn duplicate_point_with_noise_trains() {
        let params = KernelParams::new(1.0, 0.3).unwrap().with_noise(0.05);
        let x = vec![Point::scalar(0.5), Point::scalar(0.5), Point::scalar(0.9)];
        let gp = train(params, Dataset::new(x, vec![1.0, 1.0, 0.0]).unwrap()).unwrap();
        let q = QuerySet::new(vec![Point::scalar(0.6)]).unwrap();
        assert!(gp.predict(&q).unwrap().mean[0].is_finite());
    }

    #[test]
    fn interpolates_training_points_without_noise() {
        let params = KernelParams::new(1.0, 0.3).unwrap().with_jitter(1e-12);
        let x = grid(6);
        let z: Vec<f64> = x.iter().map(|p| p[0].cos()).collect();
        let gp = train(params, Dataset::new(x.clone(), z.clone()).unwrap()).unwrap();
        let pred = gp.predict(&QuerySet::new(x).unwrap()).unwrap();
        for (m, zi) in pred.mean.iter().zip(&z) {
            assert!((m - zi).abs() < 1e-6);
        }
        assert!(pred.variances().iter().all(|v| *v < 1e-6 && *v >= 0.0));
    }

    #[test]
    fn far_queries_recover_the_prior() {
        let params = KernelParams::new(0.7, 0.1).unwrap();
        let gp = train(
            params,
            Dataset::new(grid(5), vec![1.0, -1.0, 2.0, 0.5, 3.0]).unwrap(),
        )
        .unwrap();
        let pred = gp
            .predict(&QuerySet::new(vec![Point::scalar(50.0)]).unwrap())
            .unwrap();
        assert!(pred.mean[0].abs() < 1e-12);
        assert!((pred.covariance[(0, 0)] - 0.49).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        assert!(Dataset::new(vec![], vec![]).is_err());
        assert!(Dataset::new(vec![Point::scalar(0.0)], vec![1.0, 2.0]).is_err());
        assert!(Dataset::new(
            vec![Point::scalar(0.0), Point::new(vec![0.0, 1.0])],
            vec![1.0, 2.0]
        )
        .is_err());
        let params = KernelParams::new(1.0, 1.0).unwrap();
        let gp = train(params, Dataset::new(grid(3), vec![0.0; 3]).unwrap()).unwrap();
        let q = QuerySet::new(vec![Point::new(vec![0.0, 0.0])]).unwrap();
        assert!(matches!(gp.predict(&q), Err(GpError::Dimension(_))));
    }

    #[test]
    fn digest_distinguishes_inputs() {
        assert_ne!(
            InputDigest::of_points(&grid(11)),
            InputDigest::of_points(&grid(12))
        );
        assert_eq!(
            InputDigest::of_points(&grid(4)),
            InputDigest::of_points(&grid(4))
        );
    }
}
