//! Online codebook updates.
//!
//! Every arriving vector is first assigned to its nearest codeword per
//! subspace (producing its [`Code`]), then each hit cell's counter grows and
//! its codeword moves to the running mean of everything counted into it:
//! `n += 1; z += (x - z) / n`. Mini-batches assign every vector against the
//! pre-update codebook, then apply one pooled mean step per cell, so a batch
//! of one is bit-for-bit identical to the streaming rule.
//!
//! Updates can be throttled with an [`UpdateBudget`]: spend the step only on
//! the subspaces (or individual cells) that currently carry the largest
//! quantization error, leaving the rest of the model untouched.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

use crate::vector::{sq_dist, sub_block};
use crate::{Code, Codebook, Error, PQConfig, Result, Vector};

/// How much of the model a single update step may modify.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateBudget {
    /// Update every cell hit by the batch.
    Full,
    /// Update only this many subspaces — those with the largest summed
    /// quantization error in the batch. Must lie in `1..=num_subspaces`.
    Subspaces(usize),
    /// Update only the `floor(fraction * num_cells)` hit cells with the
    /// largest summed quantization error (at least one whenever the fraction
    /// is positive and anything was hit). Must lie in `0.0..=1.0`.
    Subcodewords(f64),
}

impl UpdateBudget {
    /// Checks the budget against a quantizer shape.
    pub fn validate(&self, config: &PQConfig) -> Result<()> {
        match *self {
            UpdateBudget::Full => Ok(()),
            UpdateBudget::Subspaces(alpha) => {
                if alpha == 0 || alpha > config.num_subspaces() {
                    Err(Error::Config(format!(
                        "subspace budget must lie in 1..={}, got {alpha}",
                        config.num_subspaces()
                    )))
                } else {
                    Ok(())
                }
            }
            UpdateBudget::Subcodewords(fraction) => {
                if fraction.is_finite() && (0.0..=1.0).contains(&fraction) {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "sub-codeword budget must lie in 0.0..=1.0, got {fraction}"
                    )))
                }
            }
        }
    }
}

/// What one update call assigned, measured, and modified.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchUpdateReport {
    /// Code of every batch vector, assigned against the pre-update codebook
    /// (batch order). These are the codes to store; they are never revised.
    pub codes: Vec<Code>,
    /// Cells whose counter and codeword this call actually changed.
    pub touched_cells: BTreeSet<(usize, usize)>,
    /// Quantization error of the batch per subspace (all subspaces, whether
    /// selected by the budget or not).
    pub per_subspace_error: Vec<f64>,
    /// Quantization error summed per hit cell (again regardless of budget).
    pub per_cell_error: BTreeMap<(usize, usize), f64>,
    /// Wall-clock time of the update call. Zero without the `std` feature.
    pub elapsed: Duration,
    /// Portion of `elapsed` spent writing counter and codeword changes — the
    /// phase whose cost an [`UpdateBudget`] scales, as opposed to assignment,
    /// which always covers the whole batch. Zero without the `std` feature.
    pub apply_elapsed: Duration,
}

/// Nearest codeword in subspace `m` for `block`, with its squared distance.
/// Ties resolve to the lowest index.
pub fn assign_nearest(codebook: &Codebook, m: usize, block: &[f64]) -> Result<(usize, f64)> {
    let config = codebook.config();
    if m >= config.num_subspaces() {
        return Err(Error::Config(format!(
            "subspace index {m} out of range ({} subspaces)",
            config.num_subspaces()
        )));
    }
    if block.len() != config.sub_dim() {
        return Err(Error::DimensionMismatch {
            expected: config.sub_dim(),
            actual: block.len(),
        });
    }
    Ok(nearest_cell(codebook, m, block))
}

/// Unchecked fast path behind [`assign_nearest`].
#[inline]
pub(crate) fn nearest_cell(codebook: &Codebook, m: usize, block: &[f64]) -> (usize, f64) {
    let d = block.len();
    let table = codebook.subspace_codewords(m);
    let k = codebook.config().num_codewords();
    let mut best = 0usize;
    let mut best_dist = sq_dist(block, &table[0..d]);
    for c in 1..k {
        let dist = sq_dist(block, &table[c * d..(c + 1) * d]);
        if dist < best_dist {
            best = c;
            best_dist = dist;
        }
    }
    (best, best_dist)
}

fn check_width(config: &PQConfig, x: &Vector) -> Result<()> {
    if x.len() != config.dim() {
        return Err(Error::DimensionMismatch {
            expected: config.dim(),
            actual: x.len(),
        });
    }
    Ok(())
}

/// Absorbs a single vector: per subspace, assign to the nearest codeword,
/// bump that cell's counter, and move the codeword to the new running mean.
///
/// Returns the vector's code (in `codes[0]`) plus per-subspace and per-cell
/// errors. The code reflects the codebook as it stood *before* this call.
pub fn update_streaming(codebook: &mut Codebook, x: &Vector) -> Result<BatchUpdateReport> {
    check_width(codebook.config(), x)?;

    #[cfg(feature = "std")]
    let start = std::time::Instant::now();

    let m_count = codebook.config().num_subspaces();
    let mut indices = Vec::with_capacity(m_count);
    let mut touched_cells = BTreeSet::new();
    let mut per_subspace_error = Vec::with_capacity(m_count);
    let mut per_cell_error = BTreeMap::new();
    #[cfg(feature = "std")]
    let mut apply_elapsed = Duration::ZERO;

    for m in 0..m_count {
        let block = sub_block(x, codebook.config(), m);
        let (k, err) = nearest_cell(codebook, m, block);
        indices.push(k as u16);
        per_subspace_error.push(err);
        per_cell_error.insert((m, k), err);
        touched_cells.insert((m, k));

        #[cfg(feature = "std")]
        let apply_start = std::time::Instant::now();
        let n = {
            let counter = codebook.counter_mut(m, k);
            *counter += 1;
            *counter
        } as f64;
        let block = sub_block(x, codebook.config(), m);
        for (z, &v) in codebook.codeword_mut(m, k).iter_mut().zip(block) {
            *z += (v - *z) / n;
        }
        #[cfg(feature = "std")]
        {
            apply_elapsed += apply_start.elapsed();
        }
    }

    #[cfg(feature = "std")]
    let elapsed = start.elapsed();
    #[cfg(not(feature = "std"))]
    let elapsed = Duration::ZERO;
    #[cfg(not(feature = "std"))]
    let apply_elapsed = Duration::ZERO;

    Ok(BatchUpdateReport {
        codes: vec![Code::from_raw(indices)],
        touched_cells,
        per_subspace_error,
        per_cell_error,
        elapsed,
        apply_elapsed,
    })
}

/// Selects the `alpha` subspaces with the largest batch error; ties resolve
/// to the lower subspace index. The result is sorted ascending.
pub fn select_subspaces(per_subspace_error: &[f64], alpha: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..per_subspace_error.len()).collect();
    order.sort_by(|&a, &b| {
        per_subspace_error[b]
            .partial_cmp(&per_subspace_error[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(alpha.min(per_subspace_error.len()));
    order.sort_unstable();
    order
}

/// Selects the hit cells allowed by a fractional budget: the
/// `floor(fraction * num_cells)` entries of `per_cell_error` with the largest
/// error, and at least one whenever `fraction > 0` and the map is non-empty.
/// Ties resolve to the lexicographically smaller `(subspace, index)` pair.
pub fn select_subcodewords(
    per_cell_error: &BTreeMap<(usize, usize), f64>,
    fraction: f64,
    config: &PQConfig,
) -> BTreeSet<(usize, usize)> {
    // `as usize` truncates toward zero, which is floor for this non-negative
    // product (and saturates rather than wrapping on nonsense inputs).
    let mut budget = (fraction * config.num_cells() as f64) as usize;
    if budget == 0 && fraction > 0.0 && !per_cell_error.is_empty() {
        budget = 1;
    }
    let mut cells: Vec<(&(usize, usize), &f64)> = per_cell_error.iter().collect();
    cells.sort_by(|a, b| {
        b.1.partial_cmp(a.1)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.0.cmp(b.0))
    });
    cells
        .into_iter()
        .take(budget)
        .map(|(cell, _)| *cell)
        .collect()
}

/// Absorbs a mini-batch: assign every vector against the pre-update codebook,
/// pick the cells the budget allows, then give each selected cell one pooled
/// running-mean step (`n += hits; z += sum(x - z_old) / n`).
///
/// Cells the budget skips keep both their counter and codeword, while the
/// returned codes and error measurements always cover the entire batch. With
/// a batch of one and any saturating budget this is bit-for-bit identical to
/// [`update_streaming`].
pub fn update_minibatch(
    codebook: &mut Codebook,
    batch: &[Vector],
    budget: &UpdateBudget,
) -> Result<BatchUpdateReport> {
    let config = *codebook.config();
    budget.validate(&config)?;
    for x in batch {
        check_width(&config, x)?;
    }

    #[cfg(feature = "std")]
    let start = std::time::Instant::now();

    let m_count = config.num_subspaces();
    let k_count = config.num_codewords();
    let d = config.sub_dim();

    let mut per_subspace_error = vec![0.0f64; m_count];
    let mut cell_hits = vec![0u64; config.num_cells()];
    let mut cell_error = vec![0.0f64; config.num_cells()];
    let mut codes = Vec::with_capacity(batch.len());

    for x in batch {
        let mut indices = Vec::with_capacity(m_count);
        for m in 0..m_count {
            let block = sub_block(x, &config, m);
            let (k, err) = nearest_cell(codebook, m, block);
            indices.push(k as u16);
            per_subspace_error[m] += err;
            cell_hits[m * k_count + k] += 1;
            cell_error[m * k_count + k] += err;
        }
        codes.push(Code::from_raw(indices));
    }

    let mut per_cell_error = BTreeMap::new();
    for m in 0..m_count {
        for k in 0..k_count {
            if cell_hits[m * k_count + k] > 0 {
                per_cell_error.insert((m, k), cell_error[m * k_count + k]);
            }
        }
    }

    // Which hit cells does the budget let us update?
    let mut selected = vec![false; config.num_cells()];
    match *budget {
        UpdateBudget::Full => {
            for (cell, flag) in cell_hits.iter().zip(selected.iter_mut()) {
                *flag = *cell > 0;
            }
        }
        UpdateBudget::Subspaces(alpha) => {
            for m in select_subspaces(&per_subspace_error, alpha) {
                for k in 0..k_count {
                    selected[m * k_count + k] = cell_hits[m * k_count + k] > 0;
                }
            }
        }
        UpdateBudget::Subcodewords(fraction) => {
            for (m, k) in select_subcodewords(&per_cell_error, fraction, &config) {
                selected[m * k_count + k] = true;
            }
        }
    }

    // Apply pooled mean steps in ascending (subspace, index) order.
    #[cfg(feature = "std")]
    let apply_start = std::time::Instant::now();
    let mut touched_cells = BTreeSet::new();
    let mut acc = vec![0.0f64; k_count * d];
    for m in 0..m_count {
        let any = selected[m * k_count..(m + 1) * k_count].iter().any(|&s| s);
        if !any {
            continue;
        }
        acc.iter_mut().for_each(|a| *a = 0.0);
        {
            let table = codebook.subspace_codewords(m);
            for (x, code) in batch.iter().zip(&codes) {
                let k = code.sub_index(m);
                if !selected[m * k_count + k] {
                    continue;
                }
                let block = sub_block(x, &config, m);
                let row = &mut acc[k * d..(k + 1) * d];
                let old = &table[k * d..(k + 1) * d];
                for ((a, &v), &z) in row.iter_mut().zip(block).zip(old) {
                    *a += v - z;
                }
            }
        }
        for k in 0..k_count {
            if !selected[m * k_count + k] {
                continue;
            }
            touched_cells.insert((m, k));
            let n = {
                let counter = codebook.counter_mut(m, k);
                *counter += cell_hits[m * k_count + k];
                *counter
            } as f64;
            let row = &acc[k * d..(k + 1) * d];
            for (z, &a) in codebook.codeword_mut(m, k).iter_mut().zip(row) {
                *z += a / n;
            }
        }
    }

    #[cfg(feature = "std")]
    let apply_elapsed = apply_start.elapsed();
    #[cfg(feature = "std")]
    let elapsed = start.elapsed();
    #[cfg(not(feature = "std"))]
    let elapsed = Duration::ZERO;
    #[cfg(not(feature = "std"))]
    let apply_elapsed = Duration::ZERO;

    Ok(BatchUpdateReport {
        codes,
        touched_cells,
        per_subspace_error,
        per_cell_error,
        elapsed,
        apply_elapsed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codebook_2x2() -> Codebook {
        // Two 1-wide subspaces, two codewords each.
        let cfg = PQConfig::new(2, 2, 2).unwrap();
        Codebook::from_parts(cfg, vec![0.0, 4.0, 1.0, 5.0], vec![1, 1, 2, 1]).unwrap()
    }

    #[test]
    fn assignment_prefers_nearest_then_lowest_index() {
        let cfg = PQConfig::new(1, 1, 3).unwrap();
        let cb = Codebook::from_parts(cfg, vec![0.0, 2.0, 2.0], vec![0, 0, 0]).unwrap();
        // 1.9 is nearer to 2.0; the duplicate at index 2 loses the tie.
        assert_eq!(assign_nearest(&cb, 0, &[1.9]).unwrap(), (1, 0.010000000000000018));
        // 1.0 is equidistant from 0.0 and 2.0; the lower index wins.
        assert_eq!(assign_nearest(&cb, 0, &[1.0]).unwrap(), (0, 1.0));
        // Out-of-range subspace and wrong width are rejected.
        assert!(assign_nearest(&cb, 1, &[1.0]).is_err());
        assert!(assign_nearest(&cb, 0, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn streaming_update_follows_the_running_mean_rule() {
        let mut cb = codebook_2x2();
        let x = Vector::new(vec![3.0, 0.0]).unwrap();
        let report = update_streaming(&mut cb, &x).unwrap();

        // Subspace 0: 3.0 is nearer 4.0 (cell 1); counter 1 -> 2.
        assert_eq!(cb.counter(0, 1), 2);
        assert_eq!(cb.codeword(0, 1), &[4.0 + (3.0 - 4.0) / 2.0]);
        // Subspace 1: 0.0 is nearer 1.0 (cell 0); counter 2 -> 3.
        assert_eq!(cb.counter(1, 0), 3);
        assert_eq!(cb.codeword(1, 0), &[1.0 + (0.0 - 1.0) / 3.0]);
        // Untouched cells are frozen.
        assert_eq!(cb.counter(0, 0), 1);
        assert_eq!(cb.codeword(0, 0), &[0.0]);
        assert_eq!(cb.counter(1, 1), 1);
        assert_eq!(cb.codeword(1, 1), &[5.0]);

        assert_eq!(report.codes.len(), 1);
        assert_eq!(report.codes[0].indices(), &[1, 0]);
        assert_eq!(report.per_subspace_error, vec![1.0, 1.0]);
        assert_eq!(
            report.touched_cells.iter().copied().collect::<Vec<_>>(),
            vec![(0, 1), (1, 0)]
        );
        assert_eq!(report.per_cell_error.get(&(0, 1)), Some(&1.0));
        assert_eq!(report.per_cell_error.get(&(1, 0)), Some(&1.0));
        // The apply phase is timed inside the full call, so it can never
        // exceed it.
        assert!(report.apply_elapsed <= report.elapsed);
    }

    #[test]
    fn pooled_minibatch_step_matches_hand_computation() {
        let cfg = PQConfig::new(1, 1, 2).unwrap();
        let mut cb = Codebook::from_parts(cfg, vec![0.0, 10.0], vec![1, 1]).unwrap();
        let batch = vec![
            Vector::new(vec![1.0]).unwrap(),
            Vector::new(vec![2.0]).unwrap(),
            Vector::new(vec![9.0]).unwrap(),
        ];
        let report = update_minibatch(&mut cb, &batch, &UpdateBudget::Full).unwrap();

        // Cell 0 absorbs {1, 2}: n 1 -> 3, z = 0 + ((1-0)+(2-0))/3 = 1.
        assert_eq!(cb.counter(0, 0), 3);
        assert_eq!(cb.codeword(0, 0), &[1.0]);
        // Cell 1 absorbs {9}: n 1 -> 2, z = 10 + (9-10)/2 = 9.5.
        assert_eq!(cb.counter(0, 1), 2);
        assert_eq!(cb.codeword(0, 1), &[9.5]);

        let codes: Vec<&[u16]> = report.codes.iter().map(|c| c.indices()).collect();
        assert_eq!(codes, vec![&[0u16][..], &[0u16][..], &[1u16][..]]);
        assert_eq!(report.per_subspace_error, vec![1.0 + 4.0 + 1.0]);
        assert_eq!(report.per_cell_error.get(&(0, 0)), Some(&5.0));
        assert_eq!(report.per_cell_error.get(&(0, 1)), Some(&1.0));
        assert_eq!(report.touched_cells.len(), 2);
        assert!(report.apply_elapsed <= report.elapsed);
    }

    #[test]
    fn minibatch_of_one_is_bitwise_identical_to_streaming() {
        use rand::{Rng, SeedableRng};
        let cfg = PQConfig::new(4, 2, 3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let values: Vec<f64> = (0..cfg.num_cells() * cfg.sub_dim())
            .map(|_| rng.gen::<f64>() * 2.0 - 1.0)
            .collect();
        let counters: Vec<u64> = (0..cfg.num_cells()).map(|_| rng.gen_range(1..5)).collect();
        let mut on_stream = Codebook::from_parts(cfg, values.clone(), counters.clone()).unwrap();
        let mut on_batch = on_stream.clone();

        for _ in 0..25 {
            let x = Vector::new((0..4).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()).unwrap();
            let a = update_streaming(&mut on_stream, &x).unwrap();
            let b = update_minibatch(&mut on_batch, core::slice::from_ref(&x), &UpdateBudget::Full)
                .unwrap();
            assert_eq!(a.codes, b.codes);
            assert_eq!(a.touched_cells, b.touched_cells);
            assert_eq!(a.per_cell_error, b.per_cell_error);
            for m in 0..2 {
                for k in 0..3 {
                    assert_eq!(on_stream.counter(m, k), on_batch.counter(m, k));
                    let za = on_stream.codeword(m, k).iter().map(|v| v.to_bits());
                    let zb = on_batch.codeword(m, k).iter().map(|v| v.to_bits());
                    assert!(za.eq(zb));
                }
            }
        }
    }

    #[test]
    fn subspace_budget_freezes_unselected_subspaces() {
        let mut cb = codebook_2x2();
        let frozen = cb.clone();
        // Subspace 0 error 16.0 dwarfs subspace 1 error 0.25.
        let batch = vec![Vector::new(vec![4.0 + 4.0, 1.5]).unwrap()];
        let report = update_minibatch(&mut cb, &batch, &UpdateBudget::Subspaces(1)).unwrap();

        assert_eq!(report.per_subspace_error, vec![16.0, 0.25]);
        assert_eq!(
            report.touched_cells.iter().copied().collect::<Vec<_>>(),
            vec![(0, 1)]
        );
        // Selected: subspace 0 moved.
        assert_eq!(cb.counter(0, 1), 2);
        assert_eq!(cb.codeword(0, 1), &[4.0 + (8.0 - 4.0) / 2.0]);
        // Unselected subspace 1 kept counter and codeword.
        assert_eq!(cb.counter(1, 0), frozen.counter(1, 0));
        assert_eq!(cb.codeword(1, 0), frozen.codeword(1, 0));
        // Codes and errors still cover the whole batch.
        assert_eq!(report.codes[0].indices(), &[1, 0]);
        assert_eq!(report.per_cell_error.len(), 2);
    }

    #[test]
    fn fractional_budget_keeps_only_the_worst_cells() {
        let mut cb = codebook_2x2();
        let batch = vec![Vector::new(vec![8.0, 1.5]).unwrap()];

        // floor(0.25 * 4 cells) = 1: only the worst cell (0, 1) moves.
        let mut constrained = cb.clone();
        let report =
            update_minibatch(&mut constrained, &batch, &UpdateBudget::Subcodewords(0.25)).unwrap();
        assert_eq!(
            report.touched_cells.iter().copied().collect::<Vec<_>>(),
            vec![(0, 1)]
        );
        assert_eq!(constrained.counter(0, 1), 2);
        assert_eq!(constrained.counter(1, 0), 2); // unchanged: started at 2
        assert_eq!(constrained.codeword(1, 0), &[1.0]);

        // floor(0.1 * 4) = 0, but a positive fraction with hits updates one.
        let mut minimum = cb.clone();
        let report =
            update_minibatch(&mut minimum, &batch, &UpdateBudget::Subcodewords(0.1)).unwrap();
        assert_eq!(report.touched_cells.len(), 1);

        // A zero fraction updates nothing at all.
        let report = update_minibatch(&mut cb, &batch, &UpdateBudget::Subcodewords(0.0)).unwrap();
        assert!(report.touched_cells.is_empty());
        assert_eq!(cb, codebook_2x2());
        assert_eq!(report.codes[0].indices(), &[1, 0]);
    }

    #[test]
    fn subspace_selection_ranks_by_error_then_index() {
        assert_eq!(select_subspaces(&[5.0, 1.0, 9.0, 2.0], 2), vec![0, 2]);
        assert_eq!(select_subspaces(&[5.0, 1.0, 9.0, 2.0], 4), vec![0, 1, 2, 3]);
        // Equal errors: the lower index wins the last slot.
        assert_eq!(select_subspaces(&[3.0, 3.0, 3.0], 2), vec![0, 1]);
        // Requests beyond the subspace count saturate.
        assert_eq!(select_subspaces(&[1.0, 2.0], 10), vec![0, 1]);
    }

    #[test]
    fn cell_selection_ranks_by_error_then_cell() {
        let cfg = PQConfig::new(2, 2, 2).unwrap();
        let mut errors = BTreeMap::new();
        errors.insert((0, 0), 5.0);
        errors.insert((0, 1), 1.0);
        errors.insert((1, 0), 9.0);
        errors.insert((1, 1), 2.0);

        let picked = select_subcodewords(&errors, 0.5, &cfg);
        assert_eq!(picked.iter().copied().collect::<Vec<_>>(), vec![(0, 0), (1, 0)]);

        // Ties resolve to the lexicographically smaller cell.
        let mut tied = BTreeMap::new();
        tied.insert((0, 1), 4.0);
        tied.insert((1, 0), 4.0);
        tied.insert((0, 0), 4.0);
        let picked = select_subcodewords(&tied, 0.25, &cfg);
        assert_eq!(picked.iter().copied().collect::<Vec<_>>(), vec![(0, 0)]);

        // Cells never hit are never selected, whatever the budget.
        let picked = select_subcodewords(&errors, 1.0, &cfg);
        assert_eq!(picked.len(), 4);
        assert!(select_subcodewords(&BTreeMap::new(), 1.0, &cfg).is_empty());
    }

    #[test]
    fn equal_subspace_errors_select_the_lower_subspace() {
        // Identical per-subspace codebooks and mirrored data give bitwise
        // equal errors in both subspaces.
        let cfg = PQConfig::new(2, 2, 2).unwrap();
        let mut cb =
            Codebook::from_parts(cfg, vec![0.0, 4.0, 0.0, 4.0], vec![1, 1, 1, 1]).unwrap();
        let batch = vec![Vector::new(vec![1.0, 1.0]).unwrap()];
        let report = update_minibatch(&mut cb, &batch, &UpdateBudget::Subspaces(1)).unwrap();
        assert_eq!(report.per_subspace_error[0], report.per_subspace_error[1]);
        assert_eq!(
            report.touched_cells.iter().copied().collect::<Vec<_>>(),
            vec![(0, 0)]
        );
    }

    #[test]
    fn full_counter_mass_grows_by_batch_size_per_subspace() {
        use rand::{Rng, SeedableRng};
        let cfg = PQConfig::new(6, 3, 4).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let values: Vec<f64> = (0..cfg.num_cells() * cfg.sub_dim())
            .map(|_| rng.gen::<f64>())
            .collect();
        let counters: Vec<u64> = (0..cfg.num_cells()).map(|_| rng.gen_range(0..9)).collect();
        let mut cb = Codebook::from_parts(cfg, values, counters).unwrap();
        let before: Vec<u64> = (0..3).map(|m| cb.subspace_counter_total(m)).collect();

        let batch: Vec<Vector> = (0..17)
            .map(|_| Vector::new((0..6).map(|_| rng.gen::<f64>()).collect()).unwrap())
            .collect();
        update_minibatch(&mut cb, &batch, &UpdateBudget::Full).unwrap();
        for m in 0..3 {
            assert_eq!(cb.subspace_counter_total(m), before[m] + 17);
        }
    }

    #[test]
    fn empty_batch_is_a_no_op() {
        let mut cb = codebook_2x2();
        let before = cb.clone();
        let report = update_minibatch(&mut cb, &[], &UpdateBudget::Full).unwrap();
        assert_eq!(cb, before);
        assert!(report.codes.is_empty());
        assert!(report.touched_cells.is_empty());
        assert!(report.per_cell_error.is_empty());
        assert_eq!(report.per_subspace_error, vec![0.0, 0.0]);
    }

    #[test]
    fn invalid_budgets_and_widths_are_rejected() {
        let mut cb = codebook_2x2();
        let batch = vec![Vector::new(vec![1.0, 1.0]).unwrap()];
        assert!(update_minibatch(&mut cb, &batch, &UpdateBudget::Subspaces(0)).is_err());
        assert!(update_minibatch(&mut cb, &batch, &UpdateBudget::Subspaces(3)).is_err());
        assert!(update_minibatch(&mut cb, &batch, &UpdateBudget::Subcodewords(-0.1)).is_err());
        assert!(update_minibatch(&mut cb, &batch, &UpdateBudget::Subcodewords(1.5)).is_err());
        assert!(update_minibatch(&mut cb, &batch, &UpdateBudget::Subcodewords(f64::NAN)).is_err());

        let wrong = vec![Vector::new(vec![1.0, 2.0, 3.0]).unwrap()];
        let before = cb.clone();
        assert!(update_minibatch(&mut cb, &wrong, &UpdateBudget::Full).is_err());
        assert!(update_streaming(&mut cb, &wrong[0]).is_err());
        assert_eq!(cb, before, "failed updates must not modify the codebook");
    }

    #[test]
    fn saturating_budgets_agree_bitwise_with_full() {
        use rand::{Rng, SeedableRng};
        let cfg = PQConfig::new(8, 4, 4).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let values: Vec<f64> = (0..cfg.num_cells() * cfg.sub_dim())
            .map(|_| rng.gen::<f64>() * 3.0)
            .collect();
        let counters: Vec<u64> = (0..cfg.num_cells()).map(|_| rng.gen_range(1..4)).collect();
        let base = Codebook::from_parts(cfg, values, counters).unwrap();
        let batch: Vec<Vector> = (0..40)
            .map(|_| Vector::new((0..8).map(|_| rng.gen::<f64>() * 3.0).collect()).unwrap())
            .collect();

        let mut full = base.clone();
        let mut all_subspaces = base.clone();
        let mut all_cells = base;
        let a = update_minibatch(&mut full, &batch, &UpdateBudget::Full).unwrap();
        let b = update_minibatch(&mut all_subspaces, &batch, &UpdateBudget::Subspaces(4)).unwrap();
        let c = update_minibatch(&mut all_cells, &batch, &UpdateBudget::Subcodewords(1.0)).unwrap();

        assert_eq!(a.codes, b.codes);
        assert_eq!(a.codes, c.codes);
        assert_eq!(a.touched_cells, b.touched_cells);
        assert_eq!(a.touched_cells, c.touched_cells);
        for m in 0..4 {
            for k in 0..4 {
                assert_eq!(full.counter(m, k), all_subspaces.counter(m, k));
                assert_eq!(full.counter(m, k), all_cells.counter(m, k));
                let za: Vec<u64> = full.codeword(m, k).iter().map(|v| v.to_bits()).collect();
                let zb: Vec<u64> = all_subspaces.codeword(m, k).iter().map(|v| v.to_bits()).collect();
                let zc: Vec<u64> = all_cells.codeword(m, k).iter().map(|v| v.to_bits()).collect();
                assert_eq!(za, zb);
                assert_eq!(za, zc);
            }
        }
    }

    #[test]
    fn cell_errors_sum_to_subspace_errors() {
        use rand::{Rng, SeedableRng};
        let cfg = PQConfig::new(6, 2, 8).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let values: Vec<f64> = (0..cfg.num_cells() * cfg.sub_dim())
            .map(|_| rng.gen::<f64>())
            .collect();
        let mut cb = Codebook::from_parts(cfg, values, vec![1; cfg.num_cells()]).unwrap();
        let batch: Vec<Vector> = (0..60)
            .map(|_| Vector::new((0..6).map(|_| rng.gen::<f64>()).collect()).unwrap())
            .collect();
        let report = update_minibatch(&mut cb, &batch, &UpdateBudget::Full).unwrap();
        for m in 0..2 {
            let cell_sum: f64 = report
                .per_cell_error
                .iter()
                .filter(|((mm, _), _)| *mm == m)
                .map(|(_, e)| e)
                .sum();
            let diff = (cell_sum - report.per_subspace_error[m]).abs();
            assert!(diff <= 1e-9 * report.per_subspace_error[m].max(1.0));
        }
    }
}
