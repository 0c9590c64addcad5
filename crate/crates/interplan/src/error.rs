use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (empty grids, bad tolerances, missing files).
    #[error("configuration error: {0}")]
    Config(String),

    /// Dimension or step-count mismatch between paired inputs.
    #[error("shape error: {0}")]
    Shape(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Exact enumeration refused: the assignment space is too large.
    #[error("capacity error: state space of {states} assignments exceeds cap {cap}")]
    Capacity { states: u128, cap: u128 },

    /// The planner could not produce any finite-cost candidate.
    #[error("planning failure: {0}")]
    Planning(String),

    /// Index outside a candidate set or node range.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("trace decode error: {0}")]
    TraceDecode(#[from] serde_json::Error),

    #[error("config decode error: {0}")]
    ConfigDecode(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
