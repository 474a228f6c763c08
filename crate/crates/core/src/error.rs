use thiserror::Error;

pub type Result<T, E = GprError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GprError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("hyperparameter index {index} out of range (have {count})")]
    HyperparameterIndex { index: usize, count: usize },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),

    #[error("subset size m={m} must satisfy 1 <= m <= n={n}")]
    SubsetSize { m: usize, n: usize },

    #[error("matrix of order {order} not positive definite; tried jitter levels {attempted:?}")]
    NotPositiveDefinite { order: usize, attempted: Vec<f64> },

    #[error("local model leaf {leaf} failed: {source}")]
    LeafFailure {
        leaf: usize,
        #[source]
        source: Box<GprError>,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
