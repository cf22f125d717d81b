use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failure modes shared by every stage of the pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("invalid domain [{lo}, {hi}]: must be finite with lo < hi")]
    InvalidDomain { lo: f64, hi: f64 },

    #[error("time {time} lies outside the domain [{lo}, {hi}]")]
    OutOfDomain { time: f64, lo: f64, hi: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("symmetric eigendecomposition failed: {0}")]
    EigenFailure(String),

    #[error("optimizer did not converge after {cycles} cycles (best log-likelihood {best_loglik})")]
    NonConvergence {
        cycles: usize,
        best: Vec<f64>,
        best_loglik: f64,
    },

    #[error("nuisance information matrix is singular")]
    SingularInformation,

    #[error("Schur-complement variance {0} is not positive; the information matrix is broken")]
    NonPositiveSchur(f64),
}

impl Error {
    /// True for failures of the numerical machinery, false for bad data or
    /// arguments.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite(_)
                | Error::EigenFailure(_)
                | Error::NonConvergence { .. }
                | Error::SingularInformation
                | Error::NonPositiveSchur(_)
        )
    }
}
