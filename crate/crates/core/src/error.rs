use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad input: out-of-domain parameters, malformed sequences, schema violations.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("fit did not converge after {iterations} iterations (best residual {best_residual:.6e})")]
    NonConvergence { iterations: usize, best_residual: f64 },

    /// The data cannot be explained consistently (e.g. residual above threshold, ambiguous grouping).
    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error("ambiguous line grouping: lines {candidates:?} share a coupling within tolerance")]
    Ambiguous { candidates: Vec<usize> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
