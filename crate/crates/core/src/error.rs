use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum GpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(
        "training kernel matrix is not positive definite after regularization \
         (diagonal shift {shift:e}); increase jitter or noise_std"
    )]
    NotPositiveDefinite { shift: f64 },

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("derivative bundle does not match the model: {0}")]
    StaleBundle(String),

    #[error("malformed bundle file: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("taylor radius must lie in (0, 1), got {0}")]
    InvalidRadius(f64),

    #[error("perturbation for training point {0} has already been applied")]
    DoubleApply(usize),

    #[error("incremental updates are only defined for the diagonal-Hessian mode")]
    UnsupportedIncrementalMode,
}

pub type Result<T, E = GpError> = std::result::Result<T, E>;

pub(crate) fn dim_err(what: impl Into<String>) -> GpError {
    GpError::Dimension(what.into())
}
