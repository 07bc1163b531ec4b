use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed orb id {0:?}: expected 64 lowercase hex characters")]
    MalformedId(String),

    #[error("invalid orb: {0}")]
    InvalidOrb(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("incomplete trajectory: final turn carries no reward detail")]
    IncompleteTrajectory,

    #[error("embedding dimension mismatch: store has {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("unsupported format version in {file}: found {found}")]
    FormatVersion { file: String, found: String },

    #[error("corrupt persistence file {file}: {reason}")]
    Corrupt { file: String, reason: String },

    #[error("storage io: {0}")]
    Io(#[from] std::io::Error),

    #[error("adapter transport: {0}")]
    Adapter(String),

    #[error("template: {0}")]
    Template(String),

    #[error("retrieval result and orb texts are misaligned ({hits} hits, {texts} texts)")]
    AlignmentMismatch { hits: usize, texts: usize },

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("task {task_id} has {found} trials, expected {expected}")]
    RaggedTrials {
        task_id: String,
        expected: usize,
        found: usize,
    },

    #[error("protocol: {0}")]
    Protocol(String),
}

impl Error {
    /// Coarse classification used by the HTTP layer and CLI exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::MalformedId(_)
            | Error::InvalidOrb(_)
            | Error::InvalidTrajectory(_)
            | Error::IncompleteTrajectory
            | Error::DimMismatch { .. }
            | Error::AlignmentMismatch { .. }
            | Error::InvalidRequest(_)
            | Error::Domain(_)
            | Error::RaggedTrials { .. }
            | Error::Template(_) => ErrorKind::Input,
            Error::Adapter(_) => ErrorKind::Adapter,
            Error::FormatVersion { .. } | Error::Corrupt { .. } | Error::Io(_) => {
                ErrorKind::Storage
            }
            Error::Protocol(_) => ErrorKind::Input,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Adapter,
    Storage,
}
