use thiserror::Error;

/// Errors produced by model fitting, solving, and artifact handling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("state space too large: estimated {estimate} pre-decision states, budget {budget}")]
    SizeBudget { estimate: usize, budget: usize },

    #[error("infeasible decision: {0}")]
    Infeasible(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("content hash mismatch (file corrupted or edited)")]
    Checksum,

    #[error("csv parse error at line {line}: {msg}")]
    CsvRow { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
