use alloc::format;

use crate::{Error, Result};

/// Shape of a product quantizer: vector dimensionality, number of subspaces,
/// and number of codewords per subspace.
///
/// Invariants, enforced by [`PQConfig::new`]:
/// * `dim` is divisible by `num_subspaces` (blocks are contiguous and equal),
/// * `num_subspaces >= 1` and `dim >= num_subspaces` (non-empty blocks),
/// * `2 <= num_codewords <= 65_536` (one- or two-byte packed sub-indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PQConfig {
    dim: usize,
    num_subspaces: usize,
    num_codewords: usize,
}

impl PQConfig {
    /// Maximum codewords per subspace representable by the packed code layout.
    pub const MAX_CODEWORDS: usize = 1 << 16;

    /// Validates and builds a configuration.
    pub fn new(dim: usize, num_subspaces: usize, num_codewords: usize) -> Result<Self> {
        if num_subspaces == 0 {
            return Err(Error::Config(format!(
                "num_subspaces must be at least 1, got {num_subspaces}"
            )));
        }
        if dim < num_subspaces {
            return Err(Error::Config(format!(
                "dim ({dim}) must be at least num_subspaces ({num_subspaces})"
            )));
        }
        if dim % num_subspaces != 0 {
            return Err(Error::Config(format!(
                "dim ({dim}) must be divisible by num_subspaces ({num_subspaces})"
            )));
        }
        if num_codewords < 2 {
            return Err(Error::Config(format!(
                "num_codewords must be at least 2, got {num_codewords}"
            )));
        }
        if num_codewords > Self::MAX_CODEWORDS {
            return Err(Error::Config(format!(
                "num_codewords must be at most {}, got {num_codewords}",
                Self::MAX_CODEWORDS
            )));
        }
        Ok(PQConfig {
            dim,
            num_subspaces,
            num_codewords,
        })
    }

    /// Full vector dimensionality.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of contiguous subspaces a vector is split into.
    pub fn num_subspaces(&self) -> usize {
        self.num_subspaces
    }

    /// Number of codewords in each subspace's codebook.
    pub fn num_codewords(&self) -> usize {
        self.num_codewords
    }

    /// Dimensionality of one subspace block.
    pub fn sub_dim(&self) -> usize {
        self.dim / self.num_subspaces
    }

    /// Bits needed for one code: `num_subspaces * ceil(log2(num_codewords))`.
    pub fn bits_per_code(&self) -> usize {
        let bits_per_index = (usize::BITS - (self.num_codewords - 1).leading_zeros()) as usize;
        self.num_subspaces * bits_per_index
    }

    /// Bytes occupied by one packed sub-index (1 when `num_codewords <= 256`,
    /// otherwise 2).
    pub fn bytes_per_subindex(&self) -> usize {
        if self.num_codewords <= 256 {
            1
        } else {
            2
        }
    }

    /// Bytes occupied by one packed code.
    pub fn code_bytes(&self) -> usize {
        self.num_subspaces * self.bytes_per_subindex()
    }

    /// Total number of codebook cells, `num_subspaces * num_codewords`.
    pub fn num_cells(&self) -> usize {
        self.num_subspaces * self.num_codewords
    }
}
