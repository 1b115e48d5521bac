use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error: {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("value error: {0}")]
    Value(String),

    #[error("incomplete scene {scene}: expected 40 images, found {found}")]
    IncompleteScene { scene: String, found: usize },

    #[error("size error: requested {requested} items but only {available} are available")]
    Size { requested: usize, available: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Coarse failure class, used by the command line front-end to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Runtime,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Ingestion { .. }
            | Error::Schema(_)
            | Error::Value(_)
            | Error::IncompleteScene { .. }
            | Error::Data(_)
            | Error::Csv(_)
            | Error::Image(_) => ErrorClass::Data,
            Error::Size { .. } | Error::Config(_) => ErrorClass::Usage,
            _ => ErrorClass::Runtime,
        }
    }
}
