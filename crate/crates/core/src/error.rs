use thiserror::Error;

use crate::nd::activation::ActivationKind;

/// Errors raised across the numeric kernel, solvers, models and repair methods.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not positive definite up to jitter {jitter:e}")]
    NotPsd { jitter: f64 },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("symmetric eigendecomposition did not converge")]
    EigenFailure,
    #[error("non-finite gradient component at index {0}")]
    NonFiniteGradient(usize),
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("activation {0:?} has no usable second derivative")]
    UnsupportedActivationOrder(ActivationKind),
    #[error("line search failed at iteration {0}")]
    LineSearchFailure(usize),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("integrator step size underflow near x = {0}")]
    StepFailure(f64),
    #[error("solution norm {0:e} exceeds the stability bound")]
    Instability(f64),
    #[error("characteristic left the domain at x = {0}")]
    CharacteristicEscape(f64),
    #[error("reference values have zero norm")]
    ZeroReference,
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
