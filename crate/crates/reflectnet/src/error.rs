use std::path::Path;

use reflectnet_core::Error as CoreError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Failure classes with stable process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, missing required values, invalid configuration values.
    #[error("usage: {0}")]
    Usage(String),
    /// Missing or unusable input data, filesystem failures.
    #[error("data: {0}")]
    Data(String),
    /// Unparseable or corrupt file contents.
    #[error("format: {0}")]
    Format(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Format(_) => 3,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }

    /// Configuration values rejected by the core crate.
    pub fn config(err: CoreError) -> Self {
        CliError::Usage(err.to_string())
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        CliError::Data(err.to_string())
    }
}
