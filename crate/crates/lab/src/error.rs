use std::path::Path;

/// Failure classes of the command-line driver, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            LabError::Missing(_) => 3,
            LabError::Internal(_) => 1,
        }
    }

    pub fn internal(e: impl std::fmt::Display) -> Self {
        LabError::Internal(e.to_string())
    }

    pub fn config(e: impl std::fmt::Display) -> Self {
        LabError::Config(e.to_string())
    }

    /// I/O failure on `path`; a missing file is an upstream artifact problem.
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            LabError::Missing(path.display().to_string())
        } else {
            LabError::Internal(format!("{}: {e}", path.display()))
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
