use std::path::PathBuf;

use thiserror::Error;

use crate::TokenId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus contains no tokens")]
    EmptyCorpus,
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    IdOutOfRange { id: TokenId, vocab_size: usize },
    #[error("counter length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("top-k size {k} is smaller than the {special} special tokens that must be kept")]
    KTooSmall { k: usize, special: usize },
    #[error("top-k size {k} exceeds vocabulary size {vocab_size}")]
    KTooLarge { k: usize, vocab_size: usize },
    #[error("trim criterion selected no tokens beyond the special set")]
    EmptyResult,
    #[error("counter total is zero; only top-k selection is defined")]
    ZeroTotal,
    #[error("invalid trim criterion: {0}")]
    InvalidCriterion(String),
    #[error("draft prefix is empty")]
    EmptyPrefix,
    #[error("prompt set is empty")]
    EmptyPromptSet,
    #[error("statistics contain zero blocks")]
    ZeroBlocks,
    #[error("target parameter count is zero")]
    ZeroTarget,
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("{path}:{line}: {msg}")]
    Format { path: String, line: usize, msg: String },
    #[error("selection digest {found} does not match counter digest {expected}")]
    StaleSelection { expected: String, found: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            return Error::FileNotFound(PathBuf::from(context.into()));
        }
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code for the command-line driver: 2 for configuration
    /// problems, 3 for bad input data, 4 for broken internal invariants.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_)
            | Error::KTooSmall { .. }
            | Error::KTooLarge { .. }
            | Error::InvalidCriterion(_) => 2,
            Error::Invariant(_) => 4,
            _ => 3,
        }
    }
}
