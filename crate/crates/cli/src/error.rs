use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] tagc::Error),
}

impl CliError {
    /// 2 for anything the caller can fix in the invocation or its files.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } | CliError::Parse { .. } => 2,
            CliError::Core(tagc::Error::Config(_)) | CliError::Core(tagc::Error::Train(_)) => 2,
            CliError::Core(_) => 1,
        }
    }
}

impl From<tagc::hook::ConfigError> for CliError {
    fn from(e: tagc::hook::ConfigError) -> Self {
        CliError::Core(e.into())
    }
}
