use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, dimension mismatch at an API boundary, or an
    /// infeasible scenario request.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent messages between clients.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Internal state that no longer satisfies a documented invariant
    /// (stale caches, mismatched shapes, broken simplex rows).
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// Non-finite losses or gradients during training.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// Input that makes the requested operation meaningless
    /// (zero-vector normalization, empty sample sets).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Argument outside its documented range.
    #[error("out of range: {0}")]
    Range(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
