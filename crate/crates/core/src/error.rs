use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    /// A text format could not be parsed. `line` is 1-based.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A field on a given line is malformed. `line` and `field` are 1-based.
    #[error("line {line}, field {field}: {msg}")]
    Field {
        line: usize,
        field: usize,
        msg: String,
    },

    /// A structured record violates its schema. `index` is the 0-based
    /// record position (header excluded).
    #[error("record {index}: {msg}")]
    Record { index: usize, msg: String },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dim {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): need x1 < x2 and y1 < y2")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("tokens of video {video} are not sorted by start time")]
    UnsortedTokens { video: String },

    #[error("unknown entity label: {0}")]
    UnknownLabel(String),

    #[error("no embedding for: {}", .0.join(", "))]
    MissingEmbeddings(Vec<String>),

    #[error("no gold annotation for frame {0}")]
    MissingGold(String),

    #[error("no features for frame {0}")]
    MissingFrame(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
