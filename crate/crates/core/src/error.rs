use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("config error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Data(#[from] sps_datasets::DataError),
    #[error(transparent)]
    Autodiff(#[from] sps_autodiff::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

impl CoreError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, detail: impl Into<String>) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }

    /// Config and schema problems, as opposed to failures while running.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Self::Config(_) | Self::Data(sps_datasets::DataError::Config(_))
        )
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
