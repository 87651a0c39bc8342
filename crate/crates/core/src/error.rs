use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to map failures onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad or missing input data.
    Input,
    /// Inconsistent parameters or schedules.
    Config,
    /// Failure while computing a result from valid inputs.
    Computation,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("cannot tokenize empty text")]
    EmptyText,

    #[error("empty sequence")]
    EmptySequence,

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),

    #[error("token id {token} outside vocabulary of size {size}")]
    OutOfVocabulary { token: u32, size: usize },

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid statistics: {0}")]
    InvalidStats(String),

    #[error("block {block}: {source}")]
    Block {
        block: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Record { .. }
            | Error::EmptyCorpus
            | Error::EmptyText
            | Error::UnknownSymbol(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::ModelFormat(_) => ErrorKind::Input,
            Error::Schedule(_) | Error::Config(_) | Error::Split(_) => ErrorKind::Config,
            Error::Block { source, .. } => source.kind(),
            Error::EmptySequence
            | Error::EmptyTrainingSet
            | Error::OutOfVocabulary { .. }
            | Error::LengthMismatch { .. }
            | Error::InvalidStats(_) => ErrorKind::Computation,
        }
    }
}
