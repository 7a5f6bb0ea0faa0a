use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("non-finite loss at step {step} (lr={lr:e}, reg_orig={reg_orig}, reg_flip={reg_flip}, ac={ac})")]
    Diverged {
        step: usize,
        lr: f64,
        reg_orig: f64,
        reg_flip: f64,
        ac: f64,
    },

    #[error("no pulse energy in signal")]
    NoPulseEnergy,

    #[error("no respiratory modulation in interbeat series")]
    NoRespiratoryModulation,

    #[error("LF/HF ratio undefined: HF power is zero")]
    RatioUndefined,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
