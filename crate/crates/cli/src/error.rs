use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or inconsistent configuration; exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Training or evaluation produced an unusable number; exit code 3.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Malformed checkpoint or dataset file.
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Format(_) | CliError::Io { .. } => 1,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<harmofl::Error> for CliError {
    fn from(e: harmofl::Error) -> Self {
        match e {
            harmofl::Error::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
