use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A record in a line-delimited log could not be parsed.
    #[error("line {line}: {cause}")]
    Parse { line: usize, cause: String },

    /// A value violated a domain invariant.
    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },

    #[error("shape mismatch for {name}: expected {expected:?}, got {actual:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("corrupt archive: {0}")]
    CorruptArchive(String),

    #[error("missing {block} features for instance {instance}")]
    MissingFeature { block: String, instance: String },

    /// A pipeline stage was invoked before the stage it depends on.
    #[error("{missing} is required but was not found; {hint}")]
    Dependency { missing: String, hint: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
