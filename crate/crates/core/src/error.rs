use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("power iteration did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("deletion level eta = {0} outside [0, 1)")]
    BadEta(f64),
    #[error("corruption budget eps = {0} is invalid")]
    BadEps(f64),
    #[error("distributions have disjoint supports (TV = 1)")]
    DisjointSupports,
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("mass-removal budget exceeded: needed {needed:.4}, cap {cap}")]
    BudgetExceeded { needed: f64, cap: f64 },
    #[error("weighted design is singular: {0}")]
    Singular(String),
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error("generator starved: acceptance rate {rate:.2e} after {proposals} proposals")]
    GenerationStarved { rate: f64, proposals: u64 },
    #[error("unknown strategy: {0}")]
    UnknownStrategy(String),
    #[error("unknown generator: {0}")]
    UnknownGenerator(String),
    #[error("degenerate slope fit: {0}")]
    DegenerateFit(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
