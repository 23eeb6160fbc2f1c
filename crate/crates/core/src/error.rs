use std::io;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("preprocessing left no users")]
    EmptyCorpus,

    #[error("user {user} has {len} interactions, cannot split")]
    Split { user: String, len: usize },

    #[error("{total} item(s) missing from embedding file, e.g. {shown:?}")]
    MissingItems { total: usize, shown: Vec<String> },

    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),

    #[error("item index {index} out of range for vocabulary of {vocab}")]
    IndexOutOfRange { index: u32, vocab: usize },

    #[error("sequence of length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("non-finite loss in sequence {batch_index} of the batch")]
    NumericalFailure { batch_index: usize },

    #[error("history covers the whole vocabulary, no negative available")]
    HistoryCoversVocabulary,

    #[error("user {user}: only {available} legal negatives, {needed} required")]
    InsufficientNegatives {
        user: String,
        available: usize,
        needed: usize,
    },
}

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
