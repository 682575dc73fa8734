use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("series is not siftable: {extrema} extrema (need at least 2)")]
    NotSiftable { extrema: usize },

    #[error("query {query} outside knot range [{first}, {last}]")]
    OutOfKnotRange { query: f64, first: f64, last: f64 },

    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },

    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
