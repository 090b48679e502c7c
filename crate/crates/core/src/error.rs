use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("non-finite state at integration step {step}")]
    NonFiniteState { step: usize },

    #[error("non-finite loss at iteration {iteration}: fm={fm}, repel={repel}, curve={curve}")]
    NonFiniteLoss {
        iteration: usize,
        fm: f64,
        repel: f64,
        curve: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("stale forward cache: {0}")]
    StaleCache(String),

    #[error("misconfigured sampler: {0}")]
    Misconfigured(String),

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}
