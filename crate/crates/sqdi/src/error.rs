//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A constructor argument violates a domain-type invariant.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An observation or state fell outside the support of a model density.
    #[error("domain error in stream {stream}: {reason}")]
    Domain { stream: usize, reason: String },

    /// Dimension mismatch between grids, models, states or observations.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Requested parameter lies outside the model's admissible set.
    #[error("parameter not admissible: {0}")]
    NotAdmissible(String),

    /// A threshold/embedding formula produced a degenerate value.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// Numerical failure (underflow, empty denominator, non-finite input).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Ingestion or I/O failure, with one message per offending record.
    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Exit-code class used by the CLI: 2 for input problems, 3 for
    /// numerical/domain failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 2,
            _ => 3,
        }
    }
}
