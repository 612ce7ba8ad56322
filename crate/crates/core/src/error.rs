use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ImproperMerge({0}): a parent of this merge is not available at its position")]
    ImproperMerge(usize),
    #[error("DuplicateSymbol: {symbol:?} is produced more than once (merge {index})")]
    DuplicateSymbol { index: usize, symbol: String },
    #[error("OutOfRange: position {position} in a table of {len} merges")]
    OutOfRange { position: usize, len: usize },
    #[error("UnsupportedPattern: {0}")]
    UnsupportedPattern(String),
    #[error("UnknownByte: no base symbol matches {word:?} at byte offset {offset}")]
    UnknownByte { word: String, offset: usize },
    #[error("UnknownId: symbol id {0}")]
    UnknownId(u32),
    #[error("EmptySet: {0}")]
    EmptySet(&'static str),
    #[error("BudgetTooLarge: budget {budget} exceeds the {available} merges available")]
    BudgetTooLarge { budget: usize, available: usize },
    #[error("EmptyCorpus: the corpus contains no pre-tokens")]
    EmptyCorpus,
    #[error("InsufficientLiveMerges: budget {budget} but only {live} merges fire on the corpus")]
    InsufficientLiveMerges { budget: usize, live: usize },
    #[error("UnsupportedModelType: {0}")]
    UnsupportedModelType(String),
    #[error("MalformedMerge({line}): {reason}")]
    MalformedMerge { line: usize, reason: String },
    #[error("VocabMergeMismatch: merge result {0:?} is missing from the vocabulary")]
    VocabMergeMismatch(String),
    #[error("UnknownToken: {0:?} has no id in the source vocabulary")]
    UnknownToken(String),
    #[error("DigestMismatch: file was derived from {expected}, got source {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("IoError: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Short variant name, used in CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ImproperMerge(_) => "ImproperMerge",
            Error::DuplicateSymbol { .. } => "DuplicateSymbol",
            Error::OutOfRange { .. } => "OutOfRange",
            Error::UnsupportedPattern(_) => "UnsupportedPattern",
            Error::UnknownByte { .. } => "UnknownByte",
            Error::UnknownId(_) => "UnknownId",
            Error::EmptySet(_) => "EmptySet",
            Error::BudgetTooLarge { .. } => "BudgetTooLarge",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::InsufficientLiveMerges { .. } => "InsufficientLiveMerges",
            Error::UnsupportedModelType(_) => "UnsupportedModelType",
            Error::MalformedMerge { .. } => "MalformedMerge",
            Error::VocabMergeMismatch(_) => "VocabMergeMismatch",
            Error::UnknownToken(_) => "UnknownToken",
            Error::DigestMismatch { .. } => "DigestMismatch",
            Error::Format { .. } => "Format",
            Error::Io { .. } => "IoError",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}
