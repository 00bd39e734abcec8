use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or unsupported BMP stream. `offset` is the byte offset of the
    /// offending field within the file.
    #[error("bmp decode error at offset {offset} ({field}): {reason}")]
    Decode {
        offset: usize,
        field: &'static str,
        reason: String,
    },

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class {class} has no samples")]
    MissingClass { class: usize },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("singular surrogate system: {0}")]
    Singular(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("unsupported operator `{0}` in model graph")]
    UnsupportedOperator(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png encode error: {0}")]
    Png(#[from] png::EncodingError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that originate in loading or running a model, as
    /// opposed to bad data or arguments.
    pub fn is_model_error(&self) -> bool {
        matches!(self, Error::Model(_) | Error::UnsupportedOperator(_))
    }
}
