use alloc::vec::Vec;
use core::ops::Deref;

use crate::{Error, PQConfig, Result};

/// An owned, finite, non-empty vector of `f64` components.
///
/// Construction validates every component, so the rest of the crate can rely
/// on finite arithmetic without re-checking.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Validates and wraps a raw component vector.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Vector(values))
    }

    /// Number of components.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false: empty vectors cannot be constructed.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Components as a slice.
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Consumes the wrapper and returns the raw components.
    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Vec<f64> {
        v.0
    }
}

/// A borrowed contiguous block of a vector, tagged with its subspace index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubVector<'a> {
    subspace: usize,
    values: &'a [f64],
}

impl<'a> SubVector<'a> {
    /// Which subspace this block belongs to.
    pub fn subspace(&self) -> usize {
        self.subspace
    }

    /// The block's components.
    pub fn values(&self) -> &'a [f64] {
        self.values
    }
}

/// Splits a vector into the configuration's contiguous subspace blocks.
///
/// Block `m` covers components `[m * sub_dim, (m + 1) * sub_dim)`; the blocks
/// concatenate back to the original vector. Fails if the vector's length does
/// not match `config.dim()`.
pub fn split<'a>(vector: &'a [f64], config: &PQConfig) -> Result<Vec<SubVector<'a>>> {
    if vector.len() != config.dim() {
        return Err(Error::DimensionMismatch {
            expected: config.dim(),
            actual: vector.len(),
        });
    }
    let sub_dim = config.sub_dim();
    Ok(vector
        .chunks_exact(sub_dim)
        .enumerate()
        .map(|(subspace, values)| SubVector { subspace, values })
        .collect())
}

/// Borrows subspace block `m` of a full-width vector without allocating.
///
/// The caller guarantees `vector.len() == config.dim()` and
/// `m < config.num_subspaces()`.
#[inline]
pub(crate) fn sub_block<'a>(vector: &'a [f64], config: &PQConfig, m: usize) -> &'a [f64] {
    let d = config.sub_dim();
    &vector[m * d..(m + 1) * d]
}

/// Squared Euclidean distance between two equal-length slices, summed in
/// component order. Length equality is the caller's responsibility.
#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Squared Euclidean distance between a subspace block and a codeword of the
/// same width — the quantization error of representing `block` by `codeword`.
pub fn subspace_error(block: &[f64], codeword: &[f64]) -> Result<f64> {
    if block.len() != codeword.len() {
        return Err(Error::DimensionMismatch {
            expected: block.len(),
            actual: codeword.len(),
        });
    }
    Ok(sq_dist(block, codeword))
}

/// Per-subspace quantization errors together with their total.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationMetrics {
    per_subspace: Vec<f64>,
    total: f64,
}

impl QuantizationMetrics {
    /// Builds metrics from per-subspace errors; the total is their sum in
    /// subspace order.
    pub fn from_per_subspace(per_subspace: Vec<f64>) -> Self {
        let total = per_subspace.iter().sum();
        QuantizationMetrics {
            per_subspace,
            total,
        }
    }

    /// Error contributed by each subspace.
    pub fn per_subspace(&self) -> &[f64] {
        &self.per_subspace
    }

    /// Sum of the per-subspace errors.
    pub fn total(&self) -> f64 {
        self.total
    }
}
