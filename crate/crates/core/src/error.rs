//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("numeric overflow at layer {layer}")]
    NumericOverflow { layer: usize },

    #[error("architecture line {line}: {message}")]
    ArchParse { line: usize, message: String },

    #[error("layer {layer} does not compose: {message}")]
    ArchShape { layer: usize, message: String },

    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    IdxMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: truncated file ({message})")]
    IdxTruncated { path: PathBuf, message: String },

    #[error("image count {images} does not match label count {labels}")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error(
        "line search failed at iteration {iteration}: no sufficient decrease after {trials} trials (last epsilon {epsilon:e})"
    )]
    LineSearchFailed {
        iteration: usize,
        trials: usize,
        epsilon: f64,
    },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config: unknown key `{0}`")]
    UnknownKey(String),

    #[error("config: key `{key}`: {message}")]
    ConfigValue { key: String, message: String },

    #[error("config line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            e @ Error::LineSearchFailed { .. } | e @ Error::AtIteration { .. } => e,
            e => Error::AtIteration {
                iteration,
                source: Box::new(e),
            },
        }
    }
}
