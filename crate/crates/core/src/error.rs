use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("missing weights for layer `{0}`")]
    MissingWeights(String),

    #[error("dimension mismatch for layer `{layer}`: expected {expected}, found {found}")]
    DimMismatch { layer: String, expected: String, found: String },

    #[error("bad magic")]
    BadMagic,

    #[error("unsupported version {0}")]
    Version(u16),

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("{path}: {msg}")]
    Annotation { path: String, msg: String },

    #[error("invalid image: {0}")]
    Image(String),

    #[error("backward called without a recorded forward pass")]
    NotRecorded,

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("training diverged at iteration {0}: loss is not finite")]
    Diverged(usize),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
