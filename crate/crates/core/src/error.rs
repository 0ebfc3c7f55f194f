use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("non-finite sample at index {index} in channel {channel}")]
    NonFiniteSample { channel: String, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("filter bank collision: filters {first} and {second} snap to FFT bin {bin} (sr = {sr} Hz, n_fl = {n_fl}, n_fft = {n_fft})")]
    FilterCollision {
        first: usize,
        second: usize,
        bin: usize,
        sr: f64,
        n_fl: usize,
        n_fft: usize,
    },

    #[error("numerical divergence in {location}")]
    Divergence { location: String },

    #[error("newton iteration did not converge at step {step} ({direction} direction)")]
    NewtonNonConvergence { step: usize, direction: char },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by non-finite arithmetic rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }
}
