use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Dimensions of two operands do not agree.
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// Evaluation at a pole of a rational function.
    #[error("pole: {0}")]
    Pole(String),

    /// An iterative method failed to converge.
    #[error("{method} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// A direct factorization broke down (zero or negative pivot).
    #[error("factorization breakdown at row {row}: pivot {pivot:e}")]
    Breakdown { row: usize, pivot: f64 },

    /// Time integration could not make progress.
    #[error("integration failed at t = {t}: {reason}")]
    StepFailure { t: f64, reason: String },

    /// Invalid run configuration.
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
