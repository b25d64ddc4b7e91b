use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("keyboard not found")]
    KeyboardNotFound,

    #[error("segmentation mismatch: found {found} black keys, expected {expected}")]
    SegmentationMismatch { found: usize, expected: usize },

    #[error("incomplete history: {0}")]
    IncompleteHistory(String),

    #[error("layer {layer}: {message}")]
    Shape { layer: usize, message: String },

    #[error("divergence: non-finite gradient in layer {layer}")]
    Divergence { layer: usize },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("note {0} is not part of the keyboard layout")]
    UnknownNote(u8),

    #[error("overlapping events on note {note} at frame {frame}")]
    OverlappingEvents { note: u8, frame: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {cause}")]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }

    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
