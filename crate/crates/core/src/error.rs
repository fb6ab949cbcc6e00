use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("no valid YYYYMMDD date in file name {0:?}")]
    DateParse(String),

    #[error("box {0} is not in the treatment matrix")]
    UnknownBox(u32),

    #[error("missing class directory: {0}")]
    MissingClassDir(PathBuf),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("non-finite loss at fold {fold}, epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss {
        fold: usize,
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("backward pass requested without a cached forward pass")]
    MissingCache,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the file system rather than by inputs or
    /// configuration.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
