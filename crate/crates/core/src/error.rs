//! Error type shared by all core modules.

use alloc::string::String;
use core::fmt;

/// Failures surfaced by the core numerics, compression and update rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoreError {
    /// Two vectors (or a vector and a spec) disagree on dimensionality.
    DimMismatch { expected: usize, got: usize },
    /// A value that must be finite came out NaN or infinite.
    NonFinite { context: &'static str },
    /// A compressor, schedule or objective was constructed with
    /// parameters outside its admissible range.
    InvalidSpec(String),
    /// Aggregation was asked to average an empty set of gradients.
    EmptyAggregate,
    /// A worker was asked to sample from an empty data shard.
    EmptyShard,
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::DimMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            CoreError::NonFinite { context } => {
                write!(f, "non-finite value in {context}")
            }
            CoreError::InvalidSpec(msg) => write!(f, "invalid specification: {msg}"),
            CoreError::EmptyAggregate => write!(f, "cannot aggregate an empty gradient set"),
            CoreError::EmptyShard => write!(f, "worker shard holds no samples"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}
