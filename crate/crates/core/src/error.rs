use std::path::PathBuf;

/// Errors raised by the engine. Data-quality problems in a bundle are not
/// errors; they are reported as [`crate::bundle::Violation`]s.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: unknown label `{label}`")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: empty surface")]
    EmptySurface { line: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown tag `{0}`")]
    UnknownTag(String),
    #[error("invalid label set: {0}")]
    InvalidLabelSet(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("infeasible target: achieved {achieved_tokens} tokens / {achieved_entity_tokens} entity tokens")]
    InfeasibleTarget {
        achieved_tokens: usize,
        achieved_entity_tokens: usize,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
