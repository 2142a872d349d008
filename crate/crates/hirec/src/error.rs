use thiserror::Error;

/// Library-wide error type. The CLI maps variants onto exit codes
/// (config 2, checkpoint 3, constraint violation 4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("node {node} out of range for a network of {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("node {0} is already removed")]
    AlreadyRemoved(usize),

    #[error("node {0} is not removed")]
    NotRemoved(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("cannot step past horizon (t = {t}, horizon = {horizon})")]
    HorizonExceeded { t: usize, horizon: usize },

    #[error("belief update out of order: expected step {expected}, got {got}")]
    OutOfOrder { expected: usize, got: usize },

    #[error("non-finite gradient encountered; update aborted")]
    NonFiniteGradient,

    #[error("training diverged at episode {episode}: {reason}")]
    Diverged { episode: usize, reason: String },

    #[error("needed {needed} candidates, only {available} active")]
    TooFewCandidates { needed: usize, available: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("action constraint violated: {0}")]
    ConstraintViolation(String),

    #[error("malformed graph file: {0}")]
    GraphFormat(String),

    #[error("malformed episode record: {0}")]
    RecordFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
