use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (layer sizes, split counts, flags).
    #[error("configuration error: {0}")]
    Config(String),

    /// Operand shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Input data is empty, non-finite or otherwise unusable.
    #[error("data error: {0}")]
    Data(String),

    /// ODE integration produced a non-finite state.
    #[error("non-finite state at integration step {step}")]
    Numeric { step: usize },

    /// Kernel evaluated where it is undefined.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Wraps a failure inside one split of a multi-split test.
    #[error("split {index}: {source}")]
    Split {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// Wraps a failure inside one replication of a simulation run.
    #[error("replication {index}: {source}")]
    Replication {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Innermost error, looking through split/replication wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Split { source, .. } | Error::Replication { source, .. } => source.root(),
            other => other,
        }
    }
}
