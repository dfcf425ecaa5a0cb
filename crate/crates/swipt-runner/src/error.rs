use swipt_core::{ConfigError, SolveError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown sweep axis `{0}`")]
    UnknownAxis(String),
    #[error("sweep needs at least one value and one seed")]
    EmptySweep,
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl RunError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        RunError::Io { path: path.into(), source }
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Solve(_) => crate::run::EXIT_NOT_CONVERGED,
            _ => crate::run::EXIT_CONFIG,
        }
    }
}

/// Wire form of a failed request.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub exit_code: i32,
}

impl From<&RunError> for ErrorBody {
    fn from(e: &RunError) -> Self {
        ErrorBody { error: e.to_string(), exit_code: e.exit_code() }
    }
}
