use std::path::{Path, PathBuf};

use crate::backends::BackendError;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] pmd_core::Error),

    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl EngineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        EngineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 2 for backend failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            EngineError::Backend(_) => 2,
            _ => 1,
        }
    }
}

pub type EngineResult<T> = Result<T, EngineError>;
