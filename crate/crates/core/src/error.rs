use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("surfel {index}: non-finite value in {field}")]
    NonFiniteSurfel { index: usize, field: &'static str },

    #[error("pixel ({x}, {y}): non-finite shading input")]
    NonFinitePixel { x: usize, y: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("loss term `{0}` is not finite")]
    NonFiniteLoss(&'static str),

    #[error("selected region is empty")]
    EmptyRegion,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
