use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("duplicate document id {0:?}")]
    DuplicateDocument(String),

    #[error("document {0:?} has no paragraphs")]
    NoParagraphs(String),

    #[error("unknown document id {0:?}")]
    UnknownDocument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty question")]
    EmptyQuestion,

    #[error("training data contains a single class only")]
    SingleClass,

    #[error("empty index: no phrase survived the filter")]
    EmptyIndex,

    #[error("checksum mismatch in section {0}")]
    Checksum(String),

    #[error("format error in {section}: {message}")]
    Format { section: String, message: String },

    #[error("unsupported index format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("index has no IVF section")]
    MissingIvf,

    #[error("empty gold answer set for question {0}")]
    EmptyGold(usize),

    #[error("empty QA set")]
    EmptyQaSet,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(section: &str, message: impl Into<String>) -> Self {
        Error::Format {
            section: section.to_string(),
            message: message.into(),
        }
    }
}
