//! Error type shared by all pipeline stages.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed manifest record: {msg}")]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid catalog: {0}")]
    Catalog(String),

    #[error("mask value {value} at ({x}, {y}) out of range for {num_classes} classes")]
    MaskValue {
        x: usize,
        y: usize,
        value: u8,
        num_classes: u16,
    },

    #[error("image decode error on {path}: {msg}")]
    ImageDecode { path: PathBuf, msg: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("embedding cache mismatch: {0}")]
    CacheMismatch(String),

    #[error("degenerate ensemble: mean template embedding has near-zero norm")]
    DegenerateEnsemble,

    #[error("degenerate supervision: mean foreground fraction {got:.6} below minimum {min:.6}")]
    DegenerateSupervision { got: f64, min: f64 },

    #[error("archive for category {category_index} produced no usable pseudo-labels")]
    UnusableArchive { category_index: u16 },

    #[error("saliency provider failed on {image_id}: {msg}")]
    Provider { image_id: String, msg: String },

    #[error("object placement failed after {retries} retries (spec too crowded)")]
    Placement { retries: usize },

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
