//! Gaussian-process regression with analytic sensitivities of the posterior
//! to the training inputs, and a Taylor correction that updates a trained
//! model when the true measurement locations turn out to differ from the
//! planned ones.
//!
//! The usual flow: [`train`] on planned inputs, [`build_bundle`] offline,
//! then [`correct`] the [`Prediction`] once the location errors are known.

pub mod audit;
pub mod bundle;
pub mod correction;
pub mod derivatives;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod remainder;
pub mod sim;
pub mod tensor;

pub use bundle::{
    build_bundle, build_bundle_with, load_bundle, save_bundle, BundleMeta, BundleOptions,
    DerivativeBundle,
};
pub use correction::{
    apply_increment, correct, CorrectedPrediction, CorrectionMode, DeltaBoundWarning,
    PerturbationSet, PointBlocks,
};
pub use derivatives::{CovDerivatives, MeanDerivatives};
pub use error::{GpError, Result};
pub use gp::{retrain_oracle, train, Dataset, InputDigest, Prediction, QuerySet, TrainedGP};
pub use kernel::{
    kernel_eval, kernel_grad_b, kernel_grad_cross, kernel_hess_bb, KernelParams, Point,
};
pub use remainder::{empirical_remainder, required_order, BoundInputs, RemainderCurve};
pub use tensor::Tensor;

/// Crate version, echoed into reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
