use thiserror::Error;

/// Errors produced anywhere in the reduction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    /// A matrix that must be Hurwitz has an eigenvalue with nonnegative real part.
    #[error("matrix is not stable (max real eigenvalue part {max_real_part:e}); {hint}")]
    Unstable { max_real_part: f64, hint: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("requested {requested} but at most {max} achievable: {what}")]
    Rank {
        what: String,
        requested: usize,
        max: usize,
    },

    #[error("simulation failed at t = {time}: {reason}")]
    SimulationFailure { time: f64, reason: String },

    #[error("no convergence: {0}")]
    Convergence(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
