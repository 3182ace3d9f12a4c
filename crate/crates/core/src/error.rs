use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input text is empty after normalization")]
    EmptyInput,

    #[error("invalid span ({start}, {end}): positions are 1-based and start must not exceed end")]
    InvalidSpan { start: usize, end: usize },

    #[error("tokens {first} and {second} share the span ({start}, {end})")]
    DuplicateSpan {
        first: usize,
        second: usize,
        start: usize,
        end: usize,
    },

    #[error("position {position} does not fit a position table of {max} rows")]
    PositionOverflow { position: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("vocabulary file line {line}: {reason}")]
    VocabFormat { line: usize, reason: String },

    #[error("instance file: {0}")]
    InstanceFormat(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
