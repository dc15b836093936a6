use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),

    #[error("unknown config key {0:?}")]
    UnknownKey(String),

    #[error("unknown group key {0:?}")]
    UnknownGroupKey(String),

    #[error("{path}: rows carry config digest {found}, this run is {expected}; use a fresh output_dir")]
    DigestMismatch { path: PathBuf, expected: String, found: String },

    #[error("empty report")]
    EmptyReport,

    #[error(transparent)]
    Core(#[from] dmliv::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}
