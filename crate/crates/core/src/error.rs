//! Error type shared across the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("start vector has zero norm")]
    ZeroVector,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "parameter equation infeasible: E*h + C*delta = {rhs:.6e} exceeds the \
         projected data norm {cap:.6e}; increase the decomposition size"
    )]
    Infeasible { rhs: f64, cap: f64 },

    #[error("problem size {n} exceeds the reference-solver limit {max}")]
    TooLarge { n: usize, max: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
