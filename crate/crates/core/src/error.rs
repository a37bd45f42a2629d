use thiserror::Error;

/// Errors raised by the solver core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("point {point:?} lies outside the unit domain")]
    Domain { point: Vec<f64> },

    #[error("dimension {dim} is not supported for assembly (Kronecker rank would be {kron_rank})")]
    UnsupportedDimension { dim: usize, kron_rank: usize },

    #[error("size cap exceeded: {0}")]
    SizeCap(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("iteration diverged: contraction ratio {ratio:.6} exceeded 1 for {steps} consecutive steps")]
    Divergence { ratio: f64, steps: usize },

    #[error("numerical breakdown: {0}")]
    Breakdown(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn breakdown(msg: impl Into<String>) -> Self {
        Error::Breakdown(msg.into())
    }

    /// Broad category used by front-ends to pick exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Validation(_)
            | Error::Domain { .. }
            | Error::UnsupportedDimension { .. }
            | Error::SizeCap(_)
            | Error::Singular(_) => ErrorCategory::Validation,
            Error::Divergence { .. } => ErrorCategory::Divergence,
            Error::Breakdown(_) => ErrorCategory::Breakdown,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Divergence,
    Breakdown,
}

pub type Result<T> = std::result::Result<T, Error>;
