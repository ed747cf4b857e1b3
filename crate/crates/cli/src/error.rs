//! Failure kinds and their process exit codes.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("{0}")]
    HashMismatch(String),

    #[error("{0}")]
    Dimension(String),

    #[error("{0}")]
    Other(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::HashMismatch(_) => 4,
            CliError::Dimension(_) => 5,
            CliError::Other(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::MissingArtifact(_) => "missing_artifact",
            CliError::HashMismatch(_) => "hash_mismatch",
            CliError::Dimension(_) => "dimension",
            CliError::Other(_) => "error",
        }
    }

    /// One TAB-separated line: `error`, `code=N`, `kind=K`, `msg=...`.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\t', '\n', '\r'], " ");
        format!("error\tcode={}\tkind={}\tmsg={msg}", self.code(), self.kind())
    }
}

impl From<twotower_core::Error> for CliError {
    fn from(e: twotower_core::Error) -> Self {
        use twotower_core::Error as E;
        match e {
            E::VocabMismatch { .. } => CliError::HashMismatch(e.to_string()),
            E::Dimension { .. } => CliError::Dimension(e.to_string()),
            E::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<twotower_serve::ServeError> for CliError {
    fn from(e: twotower_serve::ServeError) -> Self {
        match e {
            twotower_serve::ServeError::Core(c) => c.into(),
            twotower_serve::ServeError::Config(m) => CliError::Usage(m),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(format!("io error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(format!("json error: {e}"))
    }
}
