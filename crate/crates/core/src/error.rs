use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
///
/// Every variant maps onto one of the process exit codes used by the CLI
/// (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("frame count mismatch: expected {expected}, got {actual}")]
    FrameCountMismatch { expected: usize, actual: usize },

    #[error("stats fingerprint mismatch")]
    FingerprintMismatch,

    #[error("degenerate coefficient(s) with max == min: {0:?}")]
    DegenerateCoefficients(Vec<usize>),

    #[error("target longer than feasible: {required} frames required, {available} available")]
    InfeasibleTarget { required: usize, available: usize },

    #[error("symbol {0:?} is not in the CTC alphabet")]
    UnknownSymbol(char),

    #[error("malformed {what}: {reason}")]
    Malformed { what: String, reason: String },

    #[error("{0}: not found")]
    NotFound(PathBuf),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("backward already ran on this tape; record a new forward pass first")]
    TapeConsumed,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn malformed(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            what: what.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code: 2 missing input, 3 malformed data, 4 config
    /// mismatch, 5 numerical failure. Argument errors also report 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotFound(_) => 2,
            Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 2,
            Error::FingerprintMismatch | Error::ConfigMismatch(_) => 4,
            Error::Numerical(_) | Error::NonFinite(_) => 5,
            _ => 3,
        }
    }
}
