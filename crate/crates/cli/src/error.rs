use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: `{key}`: {message}")]
    ConfigInvalid { key: String, message: String },

    #[error("model violates the standing assumptions: {0}")]
    ModelInvalid(String),

    #[error("{} assertion(s) failed: {}", .0.len(), .0.join("; "))]
    AssertionFailed(Vec<String>),

    #[error(transparent)]
    Core(#[from] rwre_core::Error),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::ConfigInvalid { key: key.into(), message: message.into() }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::AssertionFailed(_) => 1,
            CliError::ConfigInvalid { .. } => 2,
            CliError::ModelInvalid(_) => 3,
            CliError::Core(_) | CliError::Io { .. } => 4,
        })
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
