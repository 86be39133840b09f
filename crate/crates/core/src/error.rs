use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing corpus for condition `{0}`")]
    MissingCondition(String),

    #[error("{path}: invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { path: PathBuf, offset: usize },

    #[error("empty vocabulary: no token reaches min_count {0}")]
    EmptyVocabulary(u64),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("condition `{0}` has zero co-occurrence total")]
    ZeroTotal(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of range: {what} {index} (size {size})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("non-finite gradient at entry ({i}, {j}, {c})")]
    NonFinite { i: usize, j: usize, c: usize },

    #[error("word `{word}` not in vocabulary (closest: {suggestions})", suggestions = .suggestions.join(", "))]
    OutOfVocabulary {
        word: String,
        suggestions: Vec<String>,
    },

    #[error("unknown condition `{0}`")]
    UnknownCondition(String),

    #[error("empty evaluation: no scorable records")]
    EmptyEvaluation,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Short stable identifier for the error class, used by the CLI's
    /// machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingCondition(_) => "missing_condition",
            Error::InvalidUtf8 { .. } => "invalid_utf8",
            Error::EmptyVocabulary(_) => "empty_vocabulary",
            Error::InvalidManifest(_) => "invalid_manifest",
            Error::ZeroTotal(_) => "zero_total",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::OutOfRange { .. } => "out_of_range",
            Error::ZeroNorm => "zero_norm",
            Error::NonFinite { .. } => "non_finite",
            Error::OutOfVocabulary { .. } => "out_of_vocabulary",
            Error::UnknownCondition(_) => "unknown_condition",
            Error::EmptyEvaluation => "empty_evaluation",
            Error::Parse { .. } => "parse",
            Error::Format(_) => "format",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }
}
