use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}", path = .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed EMBT payload, unparsable JSONL, or non-finite values.
    #[error("format error: {0}")]
    Format(String),

    /// Inputs that are individually well formed but disagree with each other.
    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("degenerate vector: row {id:?} has zero norm")]
    DegenerateVector { id: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("bounds error: {0}")]
    Bounds(String),

    #[error("degenerate prototype for class {class:?}: centroid norm below 1e-9")]
    DegeneratePrototype { class: String },

    #[error("class {class:?} has no member rows")]
    EmptyClass { class: String },

    #[error("average precision is undefined without positive items")]
    UndefinedAveragePrecision,

    #[error("no embedding for rendered prompt {prompt:?}")]
    MissingEmbedding { prompt: String },

    #[error("invalid prompt template {pattern:?}: {reason}")]
    InvalidTemplate { pattern: String, reason: String },

    /// A caller violated an operation's precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// An internal invariant failed; always a bug.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
