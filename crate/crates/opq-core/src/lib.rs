//! Online product quantization for approximate nearest-neighbour search over
//! growing or sliding data sets.
//!
//! A product quantizer splits a `dim`-dimensional vector into `num_subspaces`
//! contiguous blocks and represents each block by the index of its nearest
//! codeword in a per-subspace codebook. A vector is stored as the short tuple
//! of those indices (its [`Code`]); query distances are approximated from
//! per-query lookup tables without touching the original vectors.
//!
//! Classic product quantization trains its codebooks once, offline. This
//! crate keeps them *online*: every incoming vector (or mini-batch) nudges
//! the codewords it lands on through counter-weighted running means, so the
//! model tracks non-stationary streams while codes stored for older vectors
//! remain valid — nothing already in a [`CodeStore`] is ever re-encoded.
//! Update cost can be capped with an [`UpdateBudget`] that restricts each
//! step to the subspaces or cells with the largest quantization error, and a
//! [`SlidingWindow`] variant retires the contribution of expired vectors so
//! the codebook reflects only recent history.
//!
//! The crate is `no_std`-compatible (it requires `alloc`); the default `std`
//! feature only adds wall-clock timing inside update reports and the
//! `std::error::Error` impl.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

mod codebook;
mod config;
mod vector;

pub mod search;
pub mod trainer;
pub mod update;
pub mod window;

pub use codebook::{Code, Codebook};
pub use config::PQConfig;
pub use search::{CodeStore, DistanceTable};
pub use trainer::TrainConfig;
pub use update::{BatchUpdateReport, UpdateBudget};
pub use vector::{split, subspace_error, QuantizationMetrics, SubVector, Vector};
pub use window::{BatchStepOutcome, ExpiryPolicy, SlidingWindow, StepOutcome, WindowEntry};

use alloc::string::String;
use core::fmt;

/// Errors reported by quantizer construction, updates, and search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// A configuration invariant was violated (the message names it).
    Config(String),
    /// A vector or slice had the wrong length for the operation.
    DimensionMismatch { expected: usize, actual: usize },
    /// A vector component was NaN or infinite.
    NonFinite { index: usize },
    /// The operation requires at least one element and none were given.
    EmptyInput,
    /// A stored sub-index was out of range for the codebook it targets.
    CodeOutOfRange {
        subspace: usize,
        index: usize,
        limit: usize,
    },
    /// Plain insert was attempted on a window that is already at capacity.
    WindowFull { capacity: usize },
    /// Window ids must be strictly increasing in insertion order.
    IdNotIncreasing { last: u64, requested: u64 },
    /// Only the oldest window entry may be deleted.
    NotOldest { oldest: u64, requested: u64 },
    /// A codeword counter would drop below the contributions it still owes.
    CounterUnderflow { subspace: usize, index: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(reason) => write!(f, "invalid configuration: {reason}"),
            Error::DimensionMismatch { expected, actual } => {
                write!(f, "dimension mismatch: expected {expected}, got {actual}")
            }
            Error::NonFinite { index } => {
                write!(f, "non-finite value at component {index}")
            }
            Error::EmptyInput => write!(f, "input must not be empty"),
            Error::CodeOutOfRange {
                subspace,
                index,
                limit,
            } => write!(
                f,
                "sub-index {index} out of range for subspace {subspace} (codebook holds {limit})"
            ),
            Error::WindowFull { capacity } => {
                write!(f, "window is full (capacity {capacity})")
            }
            Error::IdNotIncreasing { last, requested } => write!(
                f,
                "window ids must increase: last inserted {last}, requested {requested}"
            ),
            Error::NotOldest { oldest, requested } => write!(
                f,
                "only the oldest window entry may expire: oldest is {oldest}, requested {requested}"
            ),
            Error::CounterUnderflow { subspace, index } => write!(
                f,
                "counter underflow for cell ({subspace}, {index})"
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;
