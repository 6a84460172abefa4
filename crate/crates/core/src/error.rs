//! Library-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on arguments was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The requested operation needs a spec whose noise has finite support.
    #[error("spec is not exactly enumerable: {0}")]
    NotEnumerable(String),

    /// The identification formula conditioned on a zero-probability cell.
    #[error("positivity violation at {0}")]
    Positivity(String),

    /// A linear system could not be solved without regularization.
    #[error("rank-deficient system: {0}")]
    RankDeficient(String),

    /// A fit was requested on data with a single exposure class.
    #[error("degenerate exposure group: {0}")]
    DegenerateGroup(String),

    /// Threshold calibration could not reach the requested group fraction.
    #[error("calibration failed: {0}")]
    Calibration(String),

    /// Schema or data problems while loading a cohort.
    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
