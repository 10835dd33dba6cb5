use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate rotation input: {0}")]
    DegenerateInput(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("topology error: joint {joint} ({message})")]
    Topology { joint: usize, message: String },

    #[error("ambiguous query: '{query}' matches {matches} persons")]
    AmbiguousQuery { query: String, matches: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("sequence too long: {len} > max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("no pose token in the answer span")]
    MissingPoseToken,

    #[error("{0} pose tokens in the answer span, expected one")]
    MultiplePoseTokens(usize),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
