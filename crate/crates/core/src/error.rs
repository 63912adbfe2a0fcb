use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the synthesis library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {layer}: expected {expected}, found {found}")]
    Shape {
        layer: String,
        expected: String,
        found: String,
    },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid categorical state: {0}")]
    Categorical(String),

    #[error("timestep {t} out of range 1..={max}")]
    Timestep { t: usize, max: usize },

    #[error("gradient graph already consumed by a previous backward pass")]
    GraphConsumed,

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error at row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("schema hash mismatch: checkpoint has {found}, expected {expected}")]
    SchemaHash { found: String, expected: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        layer: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Shape {
            layer: layer.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics rather than inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
