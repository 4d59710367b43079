use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("invalid coupling schedule: {0}")]
    InvalidSchedule(String),

    #[error("stale activation cache: {0}")]
    StaleCache(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::InvalidSchedule(_) => "invalid_schedule",
            Error::StaleCache(_) => "stale_cache",
            Error::Manifest(_) => "manifest",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Fold { .. } => "fold",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn in_fold(self, fold: impl Into<String>) -> Self {
        Error::Fold {
            fold: fold.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
