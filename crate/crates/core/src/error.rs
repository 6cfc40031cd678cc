use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("Gram factorization failed after jitter escalation (tried {attempts:?})")]
    Factorization { attempts: Vec<f64> },

    #[error("singular design: {0}")]
    Singular(String),

    #[error("slice shrinkage exceeded {0} steps")]
    SliceShrinkage(usize),

    #[error("need at least {needed} draws, got {got}")]
    TooFewDraws { needed: usize, got: usize },

    #[error("chain failed at iteration {iteration}: {source}")]
    Chain {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            e @ Error::Chain { .. } => e,
            e => Error::Chain {
                iteration,
                source: Box::new(e),
            },
        }
    }
}
