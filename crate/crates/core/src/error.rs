use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("io error on {path}: {source}")]
    IoPath {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A single WET record could not be parsed; reading may continue.
    #[error("malformed record at byte offset {offset}: {reason}")]
    MalformedRecord { offset: u64, reason: String },

    #[error("truncated record at byte offset {offset}: expected {expected} bytes, {available} available")]
    TruncatedRecord {
        offset: u64,
        expected: u64,
        available: u64,
    },

    #[error("empty document")]
    EmptyDocument,

    #[error("document rejected: {replacement} of {chars} characters are U+FFFD")]
    TooManyReplacements { replacement: usize, chars: usize },

    #[error("too short to shingle: {words} words, shingle width {shingle_n}")]
    TooShortToShingle { words: usize, shingle_n: usize },

    #[error("sequence too short: {0} tokens")]
    SequenceTooShort(usize),

    #[error("span budget exceeded: {spans} spans but only {sentinels} sentinels")]
    SentinelBudget { spans: usize, sentinels: usize },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },

    #[error("invalid vocabulary file: {0}")]
    InvalidVocab(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid layout: {0}")]
    Layout(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing task scores: {}", .0.join(", "))]
    MissingTasks(Vec<String>),

    #[error("config hash mismatch: manifest has {recorded}, current config hashes to {current}")]
    ConfigMismatch { recorded: String, current: String },

    #[error("stage {stage} failed: {reason}")]
    Stage { stage: String, reason: String },
}

impl Error {
    pub(crate) fn io_at(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::IoPath {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration rather than a
    /// failure while doing work. The CLI maps these to exit status 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Layout(_)
                | Error::InvalidInput(_)
                | Error::MissingTasks(_)
                | Error::ConfigMismatch { .. }
                | Error::InvalidVocab(_)
        )
    }
}
