use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] follower_lab_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}, line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("fit did not converge: {0}")]
    NonConvergence(String),
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Self::Parse { path: path.into(), line, message: message.into() }
    }

    /// Process exit code: 2 validation, 3 non-convergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) | Self::Core(_) | Self::Parse { .. } => 2,
            Self::NonConvergence(_) => 3,
            Self::Io { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
