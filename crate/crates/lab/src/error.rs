use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("{0}")]
    Core(#[from] fedmo_core::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("unknown axis '{0}'")]
    UnknownAxis(String),
}

impl LabError {
    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Core(e) => e.kind(),
            LabError::Config(_) => "config",
            LabError::Io { .. } => "io",
            LabError::Json { .. } => "json",
            LabError::Schema(_) => "schema",
            LabError::UnknownAxis(_) => "unknown_axis",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
