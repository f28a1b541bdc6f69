use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty reference")]
    EmptyReference,
    #[error("empty normalizer: {0}")]
    EmptyNormalizer(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("token `{0}` is not in the vocabulary")]
    OutOfVocab(String),
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("not enough candidates for distractor pool: need {need}, have {have}")]
    InsufficientPool { need: usize, have: usize },
    #[error("membership prior missing for candidate `{0}`")]
    MissingPrior(String),
    #[error("AUROC needs both classes (members: {members}, nonmembers: {nonmembers})")]
    SingleClass { members: usize, nonmembers: usize },
    #[error("nothing to report")]
    NothingToReport,
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("policy format: {0}")]
    PolicyFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
