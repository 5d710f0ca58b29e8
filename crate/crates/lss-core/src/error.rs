use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("not a 2LSS: {0}")]
    NotTwoLock(String),
    #[error("not nested-locking: {0}")]
    NotNested(String),
    #[error("not exclusive: {0}")]
    NotExclusive(String),
    #[error("strategy mismatch: {0}")]
    StrategyMismatch(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("limit exceeded: {0}")]
    LimitExceeded(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
