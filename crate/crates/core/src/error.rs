use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown signal type `{0}`")]
    UnknownSignal(String),

    #[error("unknown entity kind `{0}`")]
    UnknownEntityKind(String),

    #[error("k = {k} exceeds the number of points ({points})")]
    TooManyClusters { k: usize, points: usize },

    #[error("event for user {user} on day {day} is after registration day {registration_day}")]
    LeakageGuard {
        user: u64,
        day: i64,
        registration_day: i64,
    },

    #[error("ridge system is not positive definite for row {row}")]
    SingularSystem { row: usize },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    NonFiniteLoss { epoch: usize, loss: f64 },

    #[error("model has not been trained")]
    UntrainedModel,

    #[error("bad magic in {what}: expected {expected:?}")]
    BadMagic { what: &'static str, expected: &'static str },

    #[error("unsupported {what} version {found}")]
    VersionMismatch { what: &'static str, found: u32 },

    #[error("truncated {what}")]
    Truncated { what: &'static str },

    #[error("malformed {what} at line {line}: {reason}")]
    Parse {
        what: String,
        line: usize,
        reason: String,
    },

    #[error("dataset validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("{0}")]
    Format(String),

    #[error("missing {what} at {path}; run `coldstart {producer}` first")]
    MissingArtifact {
        what: String,
        path: PathBuf,
        producer: &'static str,
    },

    #[error("lineage mismatch: {0}")]
    Lineage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            line,
            reason: reason.into(),
        }
    }
}
