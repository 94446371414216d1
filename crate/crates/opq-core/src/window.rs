//! Sliding-window maintenance: the codebook tracks only the most recent
//! vectors.
//!
//! A [`SlidingWindow`] is a FIFO of `(id, vector, code)` entries with an
//! optional capacity. Inserting runs the streaming update; once the window
//! overflows, the oldest entry expires and its contribution is removed from
//! the codebook by reversing the running-mean step: `n -= 1` followed by
//! `z -= (x - z) / n` while the counter stays positive (a cell emptied of all
//! its mass keeps its codeword frozen until something lands there again).
//!
//! Expiry uses the code stored at insertion time, so no assignment scan is
//! needed and an insert/expire pair cancels exactly. The alternative of
//! re-assigning the departing vector against the current codebook is
//! available as [`ExpiryPolicy::RemoveReassigned`]; [`ExpiryPolicy::Keep`]
//! drops entries without touching the codebook at all, for measuring what
//! deletion itself costs or contributes.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use crate::search::check_code;
use crate::update::{nearest_cell, update_minibatch, update_streaming};
use crate::vector::sub_block;
use crate::{BatchUpdateReport, Code, Codebook, Error, PQConfig, Result, UpdateBudget, Vector};

/// What happens to the codebook when a window entry expires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExpiryPolicy {
    /// Reverse the mean step on the cells recorded in the entry's stored
    /// code. The default: exact inverse of the insertion, no scan needed.
    #[default]
    Remove,
    /// Reverse the mean step on the cells the vector is nearest to *now*.
    /// Touches the cells a fresh assignment would pick, which may differ
    /// from the stored code and can try to drain an already-empty cell.
    RemoveReassigned,
    /// Drop the entry but leave counters and codewords alone.
    Keep,
}

/// One resident of the window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowEntry {
    pub id: u64,
    pub vector: Vector,
    pub code: Code,
}

/// Outcome of a single insert-and-maybe-expire step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Code assigned to the inserted vector.
    pub code: Code,
    /// Id of the entry that expired to make room, if the window was full.
    pub expired: Option<u64>,
}

/// Outcome of a batched insert-then-expire step.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStepOutcome {
    /// The mini-batch update that absorbed the new vectors.
    pub report: BatchUpdateReport,
    /// Ids that expired, oldest first.
    pub expired: Vec<u64>,
}

/// FIFO of recent vectors whose contributions the codebook currently holds.
#[derive(Debug, Clone)]
pub struct SlidingWindow {
    capacity: Option<usize>,
    policy: ExpiryPolicy,
    entries: VecDeque<WindowEntry>,
    last_id: Option<u64>,
}

impl SlidingWindow {
    /// An empty window. `None` means unbounded: nothing ever expires and the
    /// window behaves exactly like plain streaming updates.
    pub fn new(capacity: Option<usize>) -> Result<Self> {
        Self::with_policy(capacity, ExpiryPolicy::default())
    }

    /// An empty window with an explicit expiry policy.
    pub fn with_policy(capacity: Option<usize>, policy: ExpiryPolicy) -> Result<Self> {
        if capacity == Some(0) {
            return Err(Error::Config(format!(
                "window capacity must be at least 1, got {capacity:?}"
            )));
        }
        Ok(SlidingWindow {
            capacity,
            policy,
            entries: VecDeque::new(),
            last_id: None,
        })
    }

    /// Maximum number of entries, or `None` when unbounded.
    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    /// Expiry policy in force.
    pub fn policy(&self) -> ExpiryPolicy {
        self.policy
    }

    /// Number of entries currently held.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// True when no entries are held.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries oldest-first.
    pub fn iter(&self) -> impl Iterator<Item = &WindowEntry> {
        self.entries.iter()
    }

    /// The entry that will expire next.
    pub fn oldest(&self) -> Option<&WindowEntry> {
        self.entries.front()
    }

    fn check_id(&self, id: u64) -> Result<()> {
        if let Some(last) = self.last_id {
            if id <= last {
                return Err(Error::IdNotIncreasing {
                    last,
                    requested: id,
                });
            }
        }
        Ok(())
    }

    /// Adds an entry whose contribution the codebook already holds — for
    /// example one encoded right after training on the batch that produced
    /// it. The codebook is not touched; only window bookkeeping happens.
    ///
    /// Fails without side effects if the window is at capacity, if `id` does
    /// not exceed every previously inserted id, or if the code or vector does
    /// not match the config.
    pub fn preload(
        &mut self,
        config: &PQConfig,
        id: u64,
        vector: Vector,
        code: Code,
    ) -> Result<()> {
        if let Some(limit) = self.capacity {
            if self.entries.len() >= limit {
                return Err(Error::WindowFull { capacity: limit });
            }
        }
        self.check_id(id)?;
        if vector.len() != config.dim() {
            return Err(Error::DimensionMismatch {
                expected: config.dim(),
                actual: vector.len(),
            });
        }
        check_code(config, &code)?;
        self.entries.push_back(WindowEntry { id, vector, code });
        self.last_id = Some(id);
        Ok(())
    }

    /// Inserts one vector: streaming codebook update plus window bookkeeping.
    ///
    /// Fails without side effects if the window is at capacity (use [`step`]
    /// for insert-with-expiry), if `id` does not exceed every previously
    /// inserted id, or if the vector has the wrong width.
    ///
    /// [`step`]: SlidingWindow::step
    pub fn insert(&mut self, codebook: &mut Codebook, id: u64, vector: Vector) -> Result<Code> {
        if let Some(limit) = self.capacity {
            if self.entries.len() >= limit {
                return Err(Error::WindowFull { capacity: limit });
            }
        }
        self.check_id(id)?;
        self.push_with_update(codebook, id, vector)
    }

    fn push_with_update(
        &mut self,
        codebook: &mut Codebook,
        id: u64,
        vector: Vector,
    ) -> Result<Code> {
        let mut report = update_streaming(codebook, &vector)?;
        let code = report.codes.swap_remove(0);
        self.entries.push_back(WindowEntry {
            id,
            vector,
            code: code.clone(),
        });
        self.last_id = Some(id);
        Ok(code)
    }

    /// Expires the oldest entry, which the caller must name by id; asking for
    /// any other entry is a protocol error. The codebook is adjusted
    /// according to the expiry policy.
    pub fn delete_oldest(&mut self, codebook: &mut Codebook, id: u64) -> Result<WindowEntry> {
        let oldest = self.entries.front().ok_or(Error::EmptyInput)?;
        if oldest.id != id {
            return Err(Error::NotOldest {
                oldest: oldest.id,
                requested: id,
            });
        }
        let config = *codebook.config();
        let entry = self.entries.front().expect("checked above");

        // Work out the target cell per subspace first so a failure cannot
        // leave the codebook half-adjusted.
        let cells: Option<Vec<usize>> = match self.policy {
            ExpiryPolicy::Keep => None,
            ExpiryPolicy::Remove => {
                Some((0..config.num_subspaces()).map(|m| entry.code.sub_index(m)).collect())
            }
            ExpiryPolicy::RemoveReassigned => Some(
                (0..config.num_subspaces())
                    .map(|m| nearest_cell(codebook, m, sub_block(&entry.vector, &config, m)).0)
                    .collect(),
            ),
        };
        if let Some(cells) = &cells {
            for (m, &k) in cells.iter().enumerate() {
                if codebook.counter(m, k) == 0 {
                    return Err(Error::CounterUnderflow { subspace: m, index: k });
                }
            }
            for (m, &k) in cells.iter().enumerate() {
                let n = {
                    let counter = codebook.counter_mut(m, k);
                    *counter -= 1;
                    *counter
                };
                if n > 0 {
                    let n = n as f64;
                    let block = sub_block(&entry.vector, &config, m);
                    for (z, &v) in codebook.codeword_mut(m, k).iter_mut().zip(block) {
                        *z -= (v - *z) / n;
                    }
                }
            }
        }
        Ok(self.entries.pop_front().expect("checked above"))
    }

    /// Inserts one vector and, if the window was full, expires the oldest
    /// entry: insertion update first, then the expiry adjustment.
    pub fn step(&mut self, codebook: &mut Codebook, id: u64, vector: Vector) -> Result<StepOutcome> {
        self.check_id(id)?;
        let code = self.push_with_update(codebook, id, vector)?;
        let mut expired = None;
        if let Some(limit) = self.capacity {
            if self.entries.len() > limit {
                let oldest = self.entries.front().expect("len > limit >= 1").id;
                self.delete_oldest(codebook, oldest)?;
                expired = Some(oldest);
            }
        }
        Ok(StepOutcome { code, expired })
    }

    /// Inserts a whole mini-batch with one pooled update, then expires oldest
    /// entries until the window fits its capacity again.
    ///
    /// `ids` pairs with `batch` and must be strictly increasing. With an
    /// unbounded window this is exactly [`update_minibatch`] plus
    /// bookkeeping, and a batch of one equals [`step`].
    ///
    /// [`step`]: SlidingWindow::step
    pub fn step_batch(
        &mut self,
        codebook: &mut Codebook,
        ids: &[u64],
        batch: &[Vector],
        budget: &UpdateBudget,
    ) -> Result<BatchStepOutcome> {
        if ids.len() != batch.len() {
            return Err(Error::DimensionMismatch {
                expected: batch.len(),
                actual: ids.len(),
            });
        }
        let mut previous = self.last_id;
        for &id in ids {
            if let Some(last) = previous {
                if id <= last {
                    return Err(Error::IdNotIncreasing {
                        last,
                        requested: id,
                    });
                }
            }
            previous = Some(id);
        }

        let report = update_minibatch(codebook, batch, budget)?;
        for ((&id, vector), code) in ids.iter().zip(batch).zip(&report.codes) {
            self.entries.push_back(WindowEntry {
                id,
                vector: vector.clone(),
                code: code.clone(),
            });
            self.last_id = Some(id);
        }

        let mut expired = Vec::new();
        if let Some(limit) = self.capacity {
            while self.entries.len() > limit {
                let oldest = self.entries.front().expect("len > limit >= 1").id;
                self.delete_oldest(codebook, oldest)?;
                expired.push(oldest);
            }
        }
        Ok(BatchStepOutcome { report, expired })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::PQConfig;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_codebook() -> Codebook {
        let cfg = PQConfig::new(2, 2, 2).unwrap();
        Codebook::from_parts(cfg, vec![0.0, 4.0, 1.0, 5.0], vec![2, 2, 2, 2]).unwrap()
    }

    fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vector {
        Vector::new((0..dim).map(|_| rng.gen::<f64>() * 6.0 - 1.0).collect()).unwrap()
    }

    #[test]
    fn insert_then_expire_restores_codewords() {
        let mut cb = small_codebook();
        let before = cb.clone();
        let mut window = SlidingWindow::new(Some(4)).unwrap();

        let x = Vector::new(vec![3.5, 0.25]).unwrap();
        let code = window.insert(&mut cb, 1, x).unwrap();
        assert_eq!(code.indices(), &[1, 0]);
        assert_eq!(window.len(), 1);
        assert_ne!(cb, before);

        let entry = window.delete_oldest(&mut cb, 1).unwrap();
        assert_eq!(entry.id, 1);
        assert!(window.is_empty());
        for m in 0..2 {
            for k in 0..2 {
                assert_eq!(cb.counter(m, k), before.counter(m, k));
                for (got, want) in cb.codeword(m, k).iter().zip(before.codeword(m, k)) {
                    let scale = want.abs().max(1.0);
                    assert!(
                        (got - want).abs() <= 1e-9 * scale,
                        "cell ({m}, {k}): {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn expiring_the_last_occupant_freezes_the_codeword() {
        let cfg = PQConfig::new(1, 1, 2).unwrap();
        let mut cb = Codebook::from_parts(cfg, vec![0.0, 100.0], vec![0, 1]).unwrap();
        let mut window = SlidingWindow::new(Some(2)).unwrap();

        // 7.0 lands in the empty cell 0 and becomes its mean exactly.
        window.insert(&mut cb, 1, Vector::new(vec![7.0]).unwrap()).unwrap();
        assert_eq!(cb.counter(0, 0), 1);
        assert_eq!(cb.codeword(0, 0), &[7.0]);

        // Expiry drains the cell to zero: counter drops, codeword freezes.
        window.delete_oldest(&mut cb, 1).unwrap();
        assert_eq!(cb.counter(0, 0), 0);
        assert_eq!(cb.codeword(0, 0), &[7.0]);
    }

    #[test]
    fn window_enforces_capacity_order_and_id_monotonicity() {
        let mut cb = small_codebook();
        let mut window = SlidingWindow::new(Some(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);

        window.insert(&mut cb, 10, random_vector(&mut rng, 2)).unwrap();
        window.insert(&mut cb, 20, random_vector(&mut rng, 2)).unwrap();

        // Full: bare insert refuses.
        let err = {
            let v = random_vector(&mut rng, 2);
            window.insert(&mut cb, 30, v).unwrap_err()
        };
        assert_eq!(err, Error::WindowFull { capacity: 2 });

        // Ids must strictly increase.
        let err = {
            let v = random_vector(&mut rng, 2);
            let mut w = SlidingWindow::new(None).unwrap();
            w.insert(&mut cb, 5, v).unwrap();
            let v = random_vector(&mut rng, 2);
            w.insert(&mut cb, 5, v).unwrap_err()
        };
        assert_eq!(err, Error::IdNotIncreasing { last: 5, requested: 5 });

        // Only the oldest entry may expire.
        let err = window.delete_oldest(&mut cb, 20).unwrap_err();
        assert_eq!(err, Error::NotOldest { oldest: 10, requested: 20 });

        // step() on the full window expires the oldest automatically.
        let outcome = window.step(&mut cb, 30, random_vector(&mut rng, 2)).unwrap();
        assert_eq!(outcome.expired, Some(10));
        assert_eq!(window.len(), 2);
        assert_eq!(window.oldest().unwrap().id, 20);

        // Empty window: nothing to expire.
        let mut empty = SlidingWindow::new(Some(2)).unwrap();
        assert_eq!(empty.delete_oldest(&mut cb, 1).unwrap_err(), Error::EmptyInput);

        // Capacity zero is rejected outright.
        assert!(SlidingWindow::new(Some(0)).is_err());
    }

    #[test]
    fn counters_track_window_occupancy() {
        let cfg = PQConfig::new(2, 2, 2).unwrap();
        let mut cb = Codebook::from_parts(cfg, vec![0.0, 4.0, 1.0, 5.0], vec![3, 3, 3, 3]).unwrap();
        let initial: u64 = 6;
        let mut window = SlidingWindow::new(Some(5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);

        for id in 0..30u64 {
            window.step(&mut cb, id + 1, random_vector(&mut rng, 2)).unwrap();
            for m in 0..2 {
                assert_eq!(
                    cb.subspace_counter_total(m),
                    initial + window.len() as u64,
                    "after id {id}"
                );
            }
        }
        assert_eq!(window.len(), 5);
    }

    #[test]
    fn unbounded_window_matches_plain_streaming_bitwise() {
        let mut windowed = small_codebook();
        let mut plain = windowed.clone();
        let mut window = SlidingWindow::new(None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);

        for id in 1..=40u64 {
            let x = random_vector(&mut rng, 2);
            let outcome = window.step(&mut windowed, id, x.clone()).unwrap();
            assert_eq!(outcome.expired, None);
            let report = update_streaming(&mut plain, &x).unwrap();
            assert_eq!(outcome.code, report.codes[0]);
        }
        assert_eq!(window.len(), 40);
        for m in 0..2 {
            for k in 0..2 {
                assert_eq!(windowed.counter(m, k), plain.counter(m, k));
                let a: Vec<u64> = windowed.codeword(m, k).iter().map(|v| v.to_bits()).collect();
                let b: Vec<u64> = plain.codeword(m, k).iter().map(|v| v.to_bits()).collect();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn keep_policy_prunes_entries_but_not_contributions() {
        let mut cb = small_codebook();
        let mut window = SlidingWindow::with_policy(Some(2), ExpiryPolicy::Keep).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);

        for id in 1..=2u64 {
            window.step(&mut cb, id, random_vector(&mut rng, 2)).unwrap();
        }
        let full = cb.clone();
        let outcome = window.step(&mut cb, 3, random_vector(&mut rng, 2)).unwrap();
        assert_eq!(outcome.expired, Some(1));
        assert_eq!(window.len(), 2);
        // The expired entry's mass is still in the counters: totals keep
        // growing by one per insert.
        for m in 0..2 {
            assert_eq!(cb.subspace_counter_total(m), full.subspace_counter_total(m) + 1);
        }
    }

    #[test]
    fn reassigned_expiry_uses_the_current_nearest_cell() {
        let cfg = PQConfig::new(1, 1, 2).unwrap();
        let mut cb = Codebook::from_parts(cfg, vec![0.0, 10.0], vec![5, 5]).unwrap();
        let mut window =
            SlidingWindow::with_policy(Some(1), ExpiryPolicy::RemoveReassigned).unwrap();

        // 4.0 is assigned to cell 0 (|4-0| < |4-10|) at insertion.
        window.insert(&mut cb, 1, Vector::new(vec![4.0]).unwrap()).unwrap();
        assert_eq!(window.oldest().unwrap().code.indices(), &[0]);

        // Drag cell 0 away so 4.0 is now nearer cell 1, then expire.
        for (id, v) in [(2u64, -30.0), (3, -30.0)] {
            let mut grower = SlidingWindow::new(None).unwrap();
            grower.insert(&mut cb, id, Vector::new(vec![v]).unwrap()).unwrap();
        }
        let before_delete = cb.clone();
        window.delete_oldest(&mut cb, 1).unwrap();
        // Cell 1 (the reassigned target) lost mass, not the stored cell 0.
        assert_eq!(cb.counter(0, 1), before_delete.counter(0, 1) - 1);
        assert_eq!(cb.counter(0, 0), before_delete.counter(0, 0));
    }

    #[test]
    fn batch_step_equals_minibatch_then_expiry() {
        let mut cb_window = small_codebook();
        let mut cb_manual = cb_window.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(23);

        let batch: Vec<Vector> = (0..6).map(|_| random_vector(&mut rng, 2)).collect();
        let ids: Vec<u64> = (1..=6).collect();

        // Manual composition: pooled update, then expire the oldest two.
        let manual_report =
            update_minibatch(&mut cb_manual, &batch, &UpdateBudget::Full).unwrap();

        let mut window = SlidingWindow::new(Some(4)).unwrap();
        let outcome = window
            .step_batch(&mut cb_window, &ids, &batch, &UpdateBudget::Full)
            .unwrap();
        assert_eq!(outcome.report.codes, manual_report.codes);
        assert_eq!(outcome.expired, vec![1, 2]);
        assert_eq!(window.len(), 4);
        assert_eq!(window.oldest().unwrap().id, 3);

        // Mirror the expiries on the manual codebook using a scratch window.
        let mut scratch = SlidingWindow::new(None).unwrap();
        for (&id, (vector, code)) in ids.iter().zip(
            batch
                .iter()
                .zip(&manual_report.codes),
        ) {
            scratch.entries.push_back(WindowEntry {
                id,
                vector: vector.clone(),
                code: code.clone(),
            });
            scratch.last_id = Some(id);
        }
        scratch.delete_oldest(&mut cb_manual, 1).unwrap();
        scratch.delete_oldest(&mut cb_manual, 2).unwrap();

        assert_eq!(cb_window, cb_manual);
    }

    #[test]
    fn batch_step_validates_ids() {
        let mut cb = small_codebook();
        let mut window = SlidingWindow::new(Some(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch: Vec<Vector> = (0..2).map(|_| random_vector(&mut rng, 2)).collect();

        assert!(matches!(
            window.step_batch(&mut cb, &[1], &batch, &UpdateBudget::Full),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            window.step_batch(&mut cb, &[2, 2], &batch, &UpdateBudget::Full),
            Err(Error::IdNotIncreasing { .. })
        ));
        // Nothing was inserted by the failed calls.
        assert!(window.is_empty());
    }

    #[test]
    fn underflow_is_reported_not_wrapped() {
        // Stored-code expiry pairs one decrement with each insert, so only
        // the reassigned policy can aim a deletion at an already-empty cell.
        let cfg = PQConfig::new(1, 1, 2).unwrap();
        let mut cb = Codebook::from_parts(cfg, vec![0.0, 10.0], vec![1, 0]).unwrap();

        let mut window =
            SlidingWindow::with_policy(None, ExpiryPolicy::RemoveReassigned).unwrap();
        window.entries.push_back(WindowEntry {
            id: 9,
            vector: Vector::new(vec![9.7]).unwrap(),
            code: Code::from_raw(vec![0]),
        });
        window.last_id = Some(9);

        // 9.7 reassigns to cell 1, whose counter is zero.
        let err = window.delete_oldest(&mut cb, 9).unwrap_err();
        assert_eq!(err, Error::CounterUnderflow { subspace: 0, index: 1 });
        // The refused deletion left everything in place.
        assert_eq!(cb.counter(0, 0), 1);
        assert_eq!(cb.counter(0, 1), 0);
        assert_eq!(window.len(), 1);
    }

    #[test]
    fn preload_leaves_codebook_alone_but_expires_like_an_insert() {
        let mut cb = small_codebook();
        let cfg = *cb.config();
        let before = cb.clone();

        let mut window = SlidingWindow::new(Some(2)).unwrap();
        let x = Vector::new(vec![3.5, 0.25]).unwrap();
        let code = crate::search::encode(&cb, &x).unwrap();
        window.preload(&cfg, 1, x, code).unwrap();

        assert_eq!(window.len(), 1);
        assert_eq!(cb, before);

        // Its mass is assumed to be in the counters already (it is: the
        // fixture counts two points per cell), so expiry down-dates normally.
        window.delete_oldest(&mut cb, 1).unwrap();
        assert_eq!(cb.counter(1, 0), 1);

        // Validation failures leave no trace.
        let cfg_err = window
            .preload(&cfg, 2, Vector::new(vec![1.0]).unwrap(), Code::from_raw(vec![0, 0]))
            .unwrap_err();
        assert_eq!(cfg_err, Error::DimensionMismatch { expected: 2, actual: 1 });
        let code_err = window
            .preload(&cfg, 2, Vector::new(vec![1.0, 2.0]).unwrap(), Code::from_raw(vec![0, 9]))
            .unwrap_err();
        assert_eq!(
            code_err,
            Error::CodeOutOfRange { subspace: 1, index: 9, limit: 2 }
        );
        assert!(window.is_empty());
    }
}
