use std::path::Path;

use thiserror::Error;

use dzvoc_core::engine::EngineError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn csv(path: &Path, source: csv::Error) -> Self {
        CliError::Csv { path: path.display().to_string(), source }
    }

    /// 2 for usage, configuration and I/O problems; 3 for numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Engine(EngineError::Diverged { .. }) => crate::EXIT_DIVERGED,
            _ => crate::EXIT_USAGE,
        }
    }
}
