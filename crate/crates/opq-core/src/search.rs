//! Encoding, code storage, and asymmetric-distance search.
//!
//! A stored vector is just its [`Code`]. At query time the full-precision
//! query is compared against codewords: one table of squared distances per
//! subspace, after which each candidate costs `num_subspaces` table lookups
//! and additions regardless of how many vectors the store holds.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::update::nearest_cell;
use crate::vector::{sq_dist, sub_block};
use crate::{Code, Codebook, Error, PQConfig, QuantizationMetrics, Result, Vector};

/// Quantizes a vector: nearest codeword per subspace, ties to the lower
/// index.
pub fn encode(codebook: &Codebook, x: &Vector) -> Result<Code> {
    Ok(encode_with_metrics(codebook, x)?.0)
}

/// [`encode`] plus the per-subspace quantization errors of the assignment.
pub fn encode_with_metrics(codebook: &Codebook, x: &Vector) -> Result<(Code, QuantizationMetrics)> {
    let config = codebook.config();
    if x.len() != config.dim() {
        return Err(Error::DimensionMismatch {
            expected: config.dim(),
            actual: x.len(),
        });
    }
    let m_count = config.num_subspaces();
    let mut indices = Vec::with_capacity(m_count);
    let mut errors = Vec::with_capacity(m_count);
    for m in 0..m_count {
        let (k, err) = nearest_cell(codebook, m, sub_block(x, config, m));
        indices.push(k as u16);
        errors.push(err);
    }
    Ok((
        Code::from_raw(indices),
        QuantizationMetrics::from_per_subspace(errors),
    ))
}

/// Rebuilds the approximation a code stands for: the concatenation of its
/// codewords.
pub fn reconstruct(codebook: &Codebook, code: &Code) -> Result<Vector> {
    let config = codebook.config();
    check_code(config, code)?;
    let mut values = Vec::with_capacity(config.dim());
    for m in 0..config.num_subspaces() {
        values.extend_from_slice(codebook.codeword(m, code.sub_index(m)));
    }
    Vector::new(values)
}

pub(crate) fn check_code(config: &PQConfig, code: &Code) -> Result<()> {
    if code.len() != config.num_subspaces() {
        return Err(Error::DimensionMismatch {
            expected: config.num_subspaces(),
            actual: code.len(),
        });
    }
    for m in 0..code.len() {
        if code.sub_index(m) >= config.num_codewords() {
            return Err(Error::CodeOutOfRange {
                subspace: m,
                index: code.sub_index(m),
                limit: config.num_codewords(),
            });
        }
    }
    Ok(())
}

/// Per-query lookup table: squared distance from each query block to every
/// codeword of its subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTable {
    config: PQConfig,
    /// Entry `(m, k)` at `m * num_codewords + k`.
    table: Vec<f64>,
}

impl DistanceTable {
    /// Squared distance from the query's block `m` to codeword `k`.
    pub fn at(&self, m: usize, k: usize) -> f64 {
        self.table[m * self.config.num_codewords() + k]
    }

    /// The shape this table was built for.
    pub fn config(&self) -> &PQConfig {
        &self.config
    }

    #[inline]
    fn distance_packed(&self, packed: &[u8]) -> f64 {
        let k_count = self.config.num_codewords();
        let mut total = 0.0;
        if self.config.bytes_per_subindex() == 1 {
            for (m, &b) in packed.iter().enumerate() {
                total += self.table[m * k_count + usize::from(b)];
            }
        } else {
            for (m, pair) in packed.chunks_exact(2).enumerate() {
                let k = usize::from(u16::from_le_bytes([pair[0], pair[1]]));
                total += self.table[m * k_count + k];
            }
        }
        total
    }
}

/// Builds the per-subspace distance table for one query.
pub fn build_distance_table(codebook: &Codebook, query: &[f64]) -> Result<DistanceTable> {
    let config = *codebook.config();
    if query.len() != config.dim() {
        return Err(Error::DimensionMismatch {
            expected: config.dim(),
            actual: query.len(),
        });
    }
    let k_count = config.num_codewords();
    let d = config.sub_dim();
    let mut table = Vec::with_capacity(config.num_cells());
    for m in 0..config.num_subspaces() {
        let block = sub_block(query, &config, m);
        let rows = codebook.subspace_codewords(m);
        for k in 0..k_count {
            table.push(sq_dist(block, &rows[k * d..(k + 1) * d]));
        }
    }
    Ok(DistanceTable { config, table })
}

/// Approximate squared distance between the table's query and a stored code:
/// the sum of the code's table entries across subspaces.
pub fn approx_distance(table: &DistanceTable, code: &Code) -> Result<f64> {
    check_code(&table.config, code)?;
    let mut total = 0.0;
    for m in 0..code.len() {
        total += table.at(m, code.sub_index(m));
    }
    Ok(total)
}

/// Codes stored by id, packed to their minimal byte width.
///
/// Inserting an id that is already present replaces its code.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeStore {
    config: PQConfig,
    entries: BTreeMap<u64, Vec<u8>>,
}

impl CodeStore {
    /// An empty store for the given shape.
    pub fn new(config: PQConfig) -> Self {
        CodeStore {
            config,
            entries: BTreeMap::new(),
        }
    }

    /// The shape every stored code must match.
    pub fn config(&self) -> &PQConfig {
        &self.config
    }

    /// Number of stored codes.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// True when nothing is stored.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Validates and stores a code under `id`, replacing any previous code.
    pub fn insert(&mut self, id: u64, code: &Code) -> Result<()> {
        let packed = pack_code(code, &self.config)?;
        self.entries.insert(id, packed);
        Ok(())
    }

    /// Removes and returns the code stored under `id`.
    pub fn remove(&mut self, id: u64) -> Option<Code> {
        self.entries
            .remove(&id)
            .map(|packed| unpack_code(&packed, &self.config).expect("stored codes are valid"))
    }

    /// The code stored under `id`, if any.
    pub fn get(&self, id: u64) -> Option<Code> {
        self.entries
            .get(&id)
            .map(|packed| unpack_code(packed, &self.config).expect("stored codes are valid"))
    }

    /// True when `id` has a stored code.
    pub fn contains(&self, id: u64) -> bool {
        self.entries.contains_key(&id)
    }

    /// The largest stored id, if any.
    pub fn last_id(&self) -> Option<u64> {
        self.entries.last_key_value().map(|(&id, _)| id)
    }

    /// Stored `(id, code)` pairs in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, Code)> + '_ {
        self.entries.iter().map(|(&id, packed)| {
            (
                id,
                unpack_code(packed, &self.config).expect("stored codes are valid"),
            )
        })
    }

    /// Stored `(id, packed bytes)` pairs in ascending id order, without
    /// decoding. Useful for serialization and bulk scans.
    pub fn packed_iter(&self) -> impl Iterator<Item = (u64, &[u8])> + '_ {
        self.entries
            .iter()
            .map(|(&id, packed)| (id, packed.as_slice()))
    }
}

/// Packs a code to little-endian bytes: one byte per sub-index when the
/// codebook holds at most 256 codewords per subspace, two bytes otherwise.
pub fn pack_code(code: &Code, config: &PQConfig) -> Result<Vec<u8>> {
    check_code(config, code)?;
    let mut bytes = Vec::with_capacity(config.code_bytes());
    if config.bytes_per_subindex() == 1 {
        for &index in code.indices() {
            bytes.push(index as u8);
        }
    } else {
        for &index in code.indices() {
            bytes.extend_from_slice(&index.to_le_bytes());
        }
    }
    Ok(bytes)
}

/// Reverses [`pack_code`], validating length and sub-index range.
pub fn unpack_code(bytes: &[u8], config: &PQConfig) -> Result<Code> {
    if bytes.len() != config.code_bytes() {
        return Err(Error::DimensionMismatch {
            expected: config.code_bytes(),
            actual: bytes.len(),
        });
    }
    let mut indices = Vec::with_capacity(config.num_subspaces());
    if config.bytes_per_subindex() == 1 {
        indices.extend(bytes.iter().map(|&b| u16::from(b)));
    } else {
        indices.extend(
            bytes
                .chunks_exact(2)
                .map(|pair| u16::from_le_bytes([pair[0], pair[1]])),
        );
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
    Ok(Code::from_raw(indices))
}

/// Orders finite distances totally; ties between candidates fall back to the
/// lower id, so results are deterministic.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    distance: f64,
    id: u64,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.id.cmp(&other.id))
    }
}

/// Keeps the `r` smallest candidates seen, by `(distance, id)`.
struct TopR {
    r: usize,
    heap: alloc::collections::BinaryHeap<Candidate>,
}

impl TopR {
    fn new(r: usize) -> Self {
        TopR {
            r,
            heap: alloc::collections::BinaryHeap::with_capacity(r + 1),
        }
    }

    #[inline]
    fn offer(&mut self, candidate: Candidate) {
        if self.r == 0 {
            return;
        }
        if self.heap.len() < self.r {
            self.heap.push(candidate);
        } else if let Some(worst) = self.heap.peek() {
            if candidate < *worst {
                self.heap.push(candidate);
                self.heap.pop();
            }
        }
    }

    fn into_sorted(self) -> Vec<(u64, f64)> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| (c.id, c.distance))
            .collect()
    }
}

/// Top-`r` ids by approximate distance to `query`, nearest first.
///
/// Builds one distance table, then scans every stored code; ties resolve to
/// the lower id. Fails if the store and codebook shapes differ or the query
/// has the wrong width.
pub fn query(
    store: &CodeStore,
    codebook: &Codebook,
    query: &[f64],
    r: usize,
) -> Result<Vec<(u64, f64)>> {
    if store.config() != codebook.config() {
        return Err(Error::Config(alloc::format!(
            "store shape {:?} does not match codebook shape {:?}",
            store.config(),
            codebook.config()
        )));
    }
    let table = build_distance_table(codebook, query)?;
    let mut top = TopR::new(r);
    for (&id, packed) in &store.entries {
        top.offer(Candidate {
            distance: table.distance_packed(packed),
            id,
        });
    }
    Ok(top.into_sorted())
}

/// Top-`r` ids by exact squared distance over full-precision vectors,
/// nearest first; ties resolve to the lower id. The ground truth that
/// approximate search is judged against.
pub fn exact_topk<'a, I>(items: I, query: &[f64], r: usize) -> Result<Vec<(u64, f64)>>
where
    I: IntoIterator<Item = (u64, &'a [f64])>,
{
    let mut top = TopR::new(r);
    for (id, values) in items {
        if values.len() != query.len() {
            return Err(Error::DimensionMismatch {
                expected: query.len(),
                actual: values.len(),
            });
        }
        top.offer(Candidate {
            distance: sq_dist(values, query),
            id,
        });
    }
    Ok(top.into_sorted())
}

/// Fraction of queries whose true nearest neighbour appears among the first
/// `r` approximate results.
pub fn recall_at_r(approx: &[Vec<(u64, f64)>], true_nn: &[u64], r: usize) -> Result<f64> {
    if approx.len() != true_nn.len() {
        return Err(Error::DimensionMismatch {
            expected: true_nn.len(),
            actual: approx.len(),
        });
    }
    if approx.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = approx
        .iter()
        .zip(true_nn)
        .filter(|(results, &truth)| {
            results
                .iter()
                .take(r)
                .any(|&(id, _)| id == truth)
        })
        .count();
    Ok(hits as f64 / approx.len() as f64)
}
