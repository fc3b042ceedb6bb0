use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library. Shape and usage violations are hard errors rather than panics so
/// that the CLI can report them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("train-mode normalization needs a batch of at least 2 rows, got {0}")]
    BatchTooSmall(usize),

    #[error("label {label} out of range for {classes} classes (row {row})")]
    LabelOutOfRange { row: usize, label: usize, classes: usize },

    #[error("layer {layer} is not a hidden layer (valid: 1..={max})")]
    NotHiddenLayer { layer: usize, max: usize },

    #[error("unit {index} does not exist in layer {layer} (width {width})")]
    NoSuchUnit { layer: usize, index: usize, width: usize },

    #[error("rotation direction is not orthogonal to the vector (|cos| = {0:e})")]
    NotOrthogonal(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration for `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
