use std::path::PathBuf;

/// Errors raised by the distribution kernel, models and estimators.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing two-times probabilities for time pair ({0}, {1})")]
    MissingPair(usize, usize),

    #[error("probability table inconsistent: {0}")]
    InconsistentTable(String),

    #[error("conditional probability row {row} sums to {sum} instead of 1")]
    RowSum { row: usize, sum: f64 },

    #[error("instance exceeds oracle scale: {0}")]
    OracleScale(String),

    #[error("survey design invalid: {0}")]
    InvalidDesign(String),

    #[error("could not place {needed} disjoint cells after {attempts} rejections")]
    PlacementFailed { needed: usize, attempts: usize },

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
