use std::path::Path;

use spinid_core::Error as CoreError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

/// Process exit statuses. Stable contract.
pub mod exit {
    pub const OK: i32 = 0;
    /// I/O and numerical failures.
    pub const FAILURE: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const NON_CONVERGENCE: i32 = 3;
    pub const INCONSISTENT: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },

    #[error("{0}")]
    Validation(String),

    #[error("{file}: {inner}")]
    InFile { file: String, inner: Box<CliError> },
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        CliError::Json { path: path.display().to_string(), source }
    }

    pub fn context(self, file: &Path) -> Self {
        CliError::InFile { file: file.display().to_string(), inner: Box::new(self) }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e {
                CoreError::Invalid(_) | CoreError::Parse { .. } | CoreError::Json(_) => exit::VALIDATION,
                CoreError::NonConvergence { .. } => exit::NON_CONVERGENCE,
                CoreError::Inconsistent(_) | CoreError::Ambiguous { .. } => exit::INCONSISTENT,
                CoreError::Io(_) | CoreError::Numerical(_) => exit::FAILURE,
            },
            CliError::Io { .. } => exit::FAILURE,
            CliError::Json { .. } | CliError::Validation(_) => exit::VALIDATION,
            CliError::InFile { inner, .. } => inner.exit_code(),
        }
    }
}
