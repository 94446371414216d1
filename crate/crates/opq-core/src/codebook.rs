use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, PQConfig, Result};

/// A quantized vector: one codeword index per subspace.
///
/// Sub-indices are stored as `u16`, which covers the full configurable range
/// of codebook sizes (up to 65 536 codewords per subspace).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Code(Vec<u16>);

impl Code {
    /// Builds a code from raw sub-indices, checking length and range against
    /// the configuration.
    pub fn from_indices(indices: Vec<u16>, config: &PQConfig) -> Result<Self> {
        if indices.len() != config.num_subspaces() {
            return Err(Error::DimensionMismatch {
                expected: config.num_subspaces(),
                actual: indices.len(),
            });
        }
        for (subspace, &index) in indices.iter().enumerate() {
            if usize::from(index) >= config.num_codewords() {
                return Err(Error::CodeOutOfRange {
                    subspace,
                    index: usize::from(index),
                    limit: config.num_codewords(),
                });
            }
        }
        Ok(Code(indices))
    }

    /// Builds a code the crate has already proven in-range.
    pub(crate) fn from_raw(indices: Vec<u16>) -> Self {
        Code(indices)
    }

    /// Sub-index for subspace `m`.
    pub fn sub_index(&self, m: usize) -> usize {
        usize::from(self.0[m])
    }

    /// All sub-indices in subspace order.
    pub fn indices(&self) -> &[u16] {
        &self.0
    }

    /// Number of subspaces the code spans.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// True when the code spans zero subspaces (never for valid configs).
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-subspace codeword tables plus the per-cell counters that drive online
/// mean updates.
///
/// Cell `(m, k)` is codeword `k` of subspace `m`; its counter records how many
/// vectors that cell currently represents. The online update and deletion
/// rules keep every codeword equal to the running mean of the vectors counted
/// into it.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    config: PQConfig,
    /// Cell `(m, k)` occupies `[(m * K + k) * sub_dim, ...)`.
    codewords: Vec<f64>,
    /// Counter for cell `(m, k)` at `m * K + k`.
    counters: Vec<u64>,
}

impl Codebook {
    /// A codebook of the right shape with all-zero codewords and counters.
    pub fn zeroed(config: PQConfig) -> Self {
        Codebook {
            config,
            codewords: vec![0.0; config.num_cells() * config.sub_dim()],
            counters: vec![0; config.num_cells()],
        }
    }

    /// Assembles a codebook from flat storage, validating shape and
    /// finiteness. `codewords` holds `num_cells * sub_dim` values in cell
    /// order; `counters` holds one value per cell.
    pub fn from_parts(config: PQConfig, codewords: Vec<f64>, counters: Vec<u64>) -> Result<Self> {
        let expected_values = config.num_cells() * config.sub_dim();
        if codewords.len() != expected_values {
            return Err(Error::Config(format!(
                "expected {expected_values} codeword values, got {}",
                codewords.len()
            )));
        }
        if counters.len() != config.num_cells() {
            return Err(Error::Config(format!(
                "expected {} counters, got {}",
                config.num_cells(),
                counters.len()
            )));
        }
        if let Some(index) = codewords.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Codebook {
            config,
            codewords,
            counters,
        })
    }

    /// The quantizer shape this codebook belongs to.
    pub fn config(&self) -> &PQConfig {
        &self.config
    }

    #[inline]
    fn cell(&self, m: usize, k: usize) -> usize {
        debug_assert!(m < self.config.num_subspaces());
        debug_assert!(k < self.config.num_codewords());
        m * self.config.num_codewords() + k
    }

    /// Codeword `k` of subspace `m`.
    #[inline]
    pub fn codeword(&self, m: usize, k: usize) -> &[f64] {
        let d = self.config.sub_dim();
        let start = self.cell(m, k) * d;
        &self.codewords[start..start + d]
    }

    #[inline]
    pub(crate) fn codeword_mut(&mut self, m: usize, k: usize) -> &mut [f64] {
        let d = self.config.sub_dim();
        let start = self.cell(m, k) * d;
        &mut self.codewords[start..start + d]
    }

    /// All codewords of subspace `m` as one contiguous slice (`num_codewords`
    /// rows of `sub_dim` values).
    #[inline]
    pub fn subspace_codewords(&self, m: usize) -> &[f64] {
        let d = self.config.sub_dim();
        let k = self.config.num_codewords();
        let start = m * k * d;
        &self.codewords[start..start + k * d]
    }

    /// Counter of cell `(m, k)`.
    #[inline]
    pub fn counter(&self, m: usize, k: usize) -> u64 {
        self.counters[self.cell(m, k)]
    }

    #[inline]
    pub(crate) fn counter_mut(&mut self, m: usize, k: usize) -> &mut u64 {
        let cell = self.cell(m, k);
        &mut self.counters[cell]
    }

    /// Sum of all counters in subspace `m`.
    ///
    /// With online updates this equals the number of vectors the subspace has
    /// absorbed (initial training set plus stream, minus deletions).
    pub fn subspace_counter_total(&self, m: usize) -> u64 {
        let k = self.config.num_codewords();
        self.counters[m * k..(m + 1) * k].iter().sum()
    }
}
