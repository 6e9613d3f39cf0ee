use thiserror::Error;

/// Errors raised by the tensor kernels, the solvers and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mode {mode} out of range for a tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("invalid mode split: {0}")]
    InvalidSplit(String),

    #[error("rank out of range: {0}")]
    RankOutOfRange(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("replication {rep}, sigma {sigma}, method {method}: {source}")]
    Benchmark {
        rep: usize,
        sigma: f64,
        method: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical kernels (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical(_) | Error::NonFinite(_) => true,
            Error::Benchmark { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
