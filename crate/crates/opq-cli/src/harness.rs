//! Reproducible experiment harness for streaming quantization runs.
//!
//! The harness turns a labeled dataset into a stream of groups, feeds them to
//! the codebook one group at a time, and measures recall, update time, and
//! quantization error at every step. Three protocols are provided:
//!
//! * [`run_dynamic_protocol`] — the store only ever grows. At iteration `g`
//!   the current store is queried first, then group `g` is absorbed
//!   (mini-batch codebook update plus store append).
//! * [`run_window_protocol`] — same loop over a bounded sliding window:
//!   once the window is full, absorbing a group also expires the oldest
//!   entries under a chosen [`ExpiryPolicy`].
//! * [`run_convergence`] — repeated streaming passes over a fixed dataset,
//!   recording quantization error after every pass next to a batch-trained
//!   reference on the same data.
//!
//! Everything is deterministic given the dataset and config seeds.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use opq_core::search::{self, encode_with_metrics};
use opq_core::trainer::train_codebook;
use opq_core::update::update_minibatch;
use opq_core::{
    CodeStore, Codebook, Error, ExpiryPolicy, PQConfig, Result, SlidingWindow, TrainConfig,
    UpdateBudget, Vector,
};

use crate::io;
use std::path::Path;

// ---------------------------------------------------------------------------
// Data generation
// ---------------------------------------------------------------------------

/// A generated or loaded dataset: vectors plus one class label per vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vectors: Vec<Vector>,
    pub labels: Vec<usize>,
}

/// Draws `n` points from a Gaussian mixture with `clusters` components in
/// `dim` dimensions.
///
/// Component means are themselves drawn from `N(0, 10^2 I)` — far apart
/// relative to the unit within-class variance — except for a single-cluster
/// mixture, whose mean is the origin. Labels are assigned round-robin, so
/// class sizes differ by at most one. Equal seeds give identical datasets.
pub fn gen_gaussian_mixture(n: usize, dim: usize, clusters: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || dim == 0 || clusters == 0 {
        return Err(Error::Config(
            "point count, dimension, and cluster count must all be positive".into(),
        ));
    }
    if clusters > n {
        return Err(Error::Config(format!(
            "{clusters} clusters need at least that many points, got {n}"
        )));
    }
    const MEAN_SPREAD: f64 = 10.0;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = if clusters == 1 {
        vec![vec![0.0; dim]]
    } else {
        (0..clusters)
            .map(|_| {
                (0..dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) * MEAN_SPREAD)
                    .collect()
            })
            .collect()
    };

    let mut vectors = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % clusters;
        let values: Vec<f64> = means[label]
            .iter()
            .map(|&mu| mu + rng.sample::<f64, _>(StandardNormal))
            .collect();
        vectors.push(Vector::new(values)?);
        labels.push(label);
    }
    Ok(Dataset { vectors, labels })
}

// ---------------------------------------------------------------------------
// Stream ordering
// ---------------------------------------------------------------------------

/// How the dataset is ordered before being cut into stream groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StreamOrder {
    /// Keep dataset order and cut into equal groups.
    #[default]
    AsIs,
    /// Sort by label, then move every group boundary that falls inside a
    /// class run to the middle of that run. Consecutive groups share a class
    /// across their boundary, so the data distribution drifts gradually.
    ByLabelHalfOverlap,
    /// Sort by label, then move every boundary to the nearest class edge.
    /// Each group holds whole classes only, so the distribution jumps.
    ByLabelDisjoint,
}

/// Cuts a dataset into `groups` consecutive index groups under `order`.
///
/// Boundary adjustment can empty a group when there are fewer classes than
/// groups or classes are tiny; that is reported as an error rather than
/// silently merging groups.
pub fn order_stream(dataset: &Dataset, order: StreamOrder, groups: usize) -> Result<Vec<Vec<usize>>> {
    let n = dataset.vectors.len();
    if groups < 2 {
        return Err(Error::Config(format!(
            "need at least 2 groups (one to initialize, one to stream), got {groups}"
        )));
    }
    if dataset.labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: dataset.labels.len(),
        });
    }
    if n < groups {
        return Err(Error::Config(format!(
            "cannot cut {n} vectors into {groups} non-empty groups"
        )));
    }

    let indices: Vec<usize> = match order {
        StreamOrder::AsIs => (0..n).collect(),
        StreamOrder::ByLabelHalfOverlap | StreamOrder::ByLabelDisjoint => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by_key(|&i| (dataset.labels[i], i));
            idx
        }
    };

    // Provisional equal-size boundaries; interior ones may move.
    let mut bounds: Vec<usize> = (0..=groups).map(|g| g * n / groups).collect();

    if order != StreamOrder::AsIs {
        // Runs of equal labels in the sorted order: (start, end) exclusive.
        let mut runs = Vec::new();
        let mut start = 0;
        for i in 1..=n {
            if i == n || dataset.labels[indices[i]] != dataset.labels[indices[start]] {
                runs.push((start, i));
                start = i;
            }
        }
        for bound in bounds[1..groups].iter_mut() {
            let run = runs
                .iter()
                .find(|&&(s, e)| *bound > s && *bound < e)
                .copied();
            if let Some((s, e)) = run {
                *bound = match order {
                    StreamOrder::ByLabelHalfOverlap => s + (e - s) / 2,
                    StreamOrder::ByLabelDisjoint => {
                        if *bound - s <= e - *bound {
                            s
                        } else {
                            e
                        }
                    }
                    StreamOrder::AsIs => unreachable!(),
                };
            }
        }
    }

    for pair in bounds.windows(2) {
        if pair[0] >= pair[1] {
            return Err(Error::Config(format!(
                "{order:?} ordering produced an empty group (boundaries {bounds:?}); \
                 use fewer groups or more data per class"
            )));
        }
    }

    Ok(bounds
        .windows(2)
        .map(|pair| indices[pair[0]..pair[1]].to_vec())
        .collect())
}

// ---------------------------------------------------------------------------
// Protocols
// ---------------------------------------------------------------------------

/// Which vectors are used as queries at each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QueryPolicy {
    /// The incoming group itself queries the store built so far, then is
    /// absorbed. Every group after the first yields a record.
    #[default]
    Dynamic,
    /// The last group is held out as a fixed query set and never absorbed;
    /// all groups in between yield records.
    FixedLastGroup,
}

/// Full description of a protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub pq: PQConfig,
    pub train: TrainConfig,
    pub budget: UpdateBudget,
    pub order: StreamOrder,
    pub groups: usize,
    pub query_policy: QueryPolicy,
    /// Neighbors retrieved per query; recall@R counts how often the true
    /// nearest neighbor is among them.
    pub recall_r: usize,
}

impl ProtocolConfig {
    pub fn new(pq: PQConfig) -> Self {
        ProtocolConfig {
            pq,
            train: TrainConfig::default(),
            budget: UpdateBudget::Full,
            order: StreamOrder::default(),
            groups: 12,
            query_policy: QueryPolicy::default(),
            recall_r: 20,
        }
    }
}

/// One measured iteration of a protocol run.
///
/// `iteration` is the index of the absorbed group. `recall` is measured
/// against the store as it stood *before* the group was absorbed;
/// `update_seconds` covers the codebook update plus store append (and window
/// expiry, when there is a window); `mean_qe` is the mean squared
/// quantization error of the group under the codebook that encoded it;
/// `store_size` counts entries after the update.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub recall: f64,
    pub update_seconds: f64,
    pub mean_qe: f64,
    pub store_size: usize,
}

/// Final state and per-iteration records of a growing-store run.
#[derive(Debug)]
pub struct ProtocolOutcome {
    pub records: Vec<IterationRecord>,
    pub codebook: Codebook,
    pub store: CodeStore,
    /// Store id (stream position) to dataset index.
    pub streamed: Vec<usize>,
    /// Time each iteration's update spent writing counters and codewords —
    /// the phase the update budget scales. Aligned with `records`.
    pub apply_seconds: Vec<f64>,
}

/// Final state and per-iteration records of a sliding-window run.
#[derive(Debug)]
pub struct WindowOutcome {
    pub records: Vec<IterationRecord>,
    pub codebook: Codebook,
    pub store: CodeStore,
    pub window: SlidingWindow,
}

fn validate_protocol(cfg: &ProtocolConfig) -> Result<()> {
    cfg.budget.validate(&cfg.pq)?;
    if cfg.recall_r == 0 {
        return Err(Error::Config("recall_r must be positive".into()));
    }
    let min_groups = match cfg.query_policy {
        QueryPolicy::Dynamic => 2,
        QueryPolicy::FixedLastGroup => 3,
    };
    if cfg.groups < min_groups {
        return Err(Error::Config(format!(
            "{:?} needs at least {min_groups} groups, got {}",
            cfg.query_policy, cfg.groups
        )));
    }
    Ok(())
}

/// Groups absorbed at each iteration, and the shared query set for the
/// fixed-query policy.
fn update_range(cfg: &ProtocolConfig) -> std::ops::Range<usize> {
    match cfg.query_policy {
        QueryPolicy::Dynamic => 1..cfg.groups,
        QueryPolicy::FixedLastGroup => 1..cfg.groups - 1,
    }
}

/// Measures recall@R of the store against exact search over the raw vectors
/// currently represented in it.
fn measure_recall(
    data: &Dataset,
    streamed: &[usize],
    store: &CodeStore,
    codebook: &Codebook,
    queries: &[usize],
    r: usize,
) -> Result<f64> {
    let mut approx = Vec::with_capacity(queries.len());
    let mut truth = Vec::with_capacity(queries.len());
    for &qi in queries {
        let q = data.vectors[qi].as_slice();
        approx.push(search::query(store, codebook, q, r)?);
        let items = streamed
            .iter()
            .enumerate()
            .map(|(pos, &di)| (pos as u64, data.vectors[di].as_slice()));
        truth.push(search::exact_topk(items, q, 1)?[0].0);
    }
    search::recall_at_r(&approx, &truth, r)
}

fn group_vectors<'a>(data: &'a Dataset, group: &[usize]) -> Vec<Vector> {
    group.iter().map(|&i| data.vectors[i].clone()).collect()
}

/// Runs the growing-store protocol: train on group 0, then for each later
/// group query first and absorb second.
pub fn run_dynamic_protocol(data: &Dataset, cfg: &ProtocolConfig) -> Result<ProtocolOutcome> {
    validate_protocol(cfg)?;
    let groups = order_stream(data, cfg.order, cfg.groups)?;

    let init = group_vectors(data, &groups[0]);
    let mut codebook = train_codebook(&init, &cfg.pq, &cfg.train)?;
    let mut store = CodeStore::new(cfg.pq);
    let mut streamed: Vec<usize> = Vec::new();
    for (pos, &di) in groups[0].iter().enumerate() {
        let code = search::encode(&codebook, &data.vectors[di])?;
        store.insert(pos as u64, &code)?;
        streamed.push(di);
    }

    let mut records = Vec::new();
    let mut apply_seconds = Vec::new();
    for g in update_range(cfg) {
        let query_group: &[usize] = match cfg.query_policy {
            QueryPolicy::Dynamic => &groups[g],
            QueryPolicy::FixedLastGroup => &groups[cfg.groups - 1],
        };
        let recall = measure_recall(data, &streamed, &store, &codebook, query_group, cfg.recall_r)?;

        let batch = group_vectors(data, &groups[g]);
        let started = Instant::now();
        let report = update_minibatch(&mut codebook, &batch, &cfg.budget)?;
        for (offset, code) in report.codes.iter().enumerate() {
            store.insert((streamed.len() + offset) as u64, code)?;
        }
        let update_seconds = started.elapsed().as_secs_f64();
        streamed.extend_from_slice(&groups[g]);

        apply_seconds.push(report.apply_elapsed.as_secs_f64());
        records.push(IterationRecord {
            iteration: g,
            recall,
            update_seconds,
            mean_qe: report.per_subspace_error.iter().sum::<f64>() / batch.len() as f64,
            store_size: store.len(),
        });
    }

    Ok(ProtocolOutcome {
        records,
        codebook,
        store,
        streamed,
        apply_seconds,
    })
}

/// Runs the sliding-window protocol: like [`run_dynamic_protocol`], but the
/// data lives in a window of `capacity` entries and absorbing a group also
/// expires the oldest streamed entries under `policy` once the window is
/// full, removing their codes from the store as well.
///
/// The initial group only trains the codebook and populates the store: it is
/// never part of the window, its codes never expire, and its counter mass
/// stays in the codebook for good. `capacity` of `None` means unbounded,
/// which reproduces the growing-store protocol exactly.
pub fn run_window_protocol(
    data: &Dataset,
    cfg: &ProtocolConfig,
    capacity: Option<usize>,
    policy: ExpiryPolicy,
) -> Result<WindowOutcome> {
    validate_protocol(cfg)?;
    let groups = order_stream(data, cfg.order, cfg.groups)?;

    let init = group_vectors(data, &groups[0]);
    let mut codebook = train_codebook(&init, &cfg.pq, &cfg.train)?;
    let mut window = SlidingWindow::with_policy(capacity, policy)?;
    let mut store = CodeStore::new(cfg.pq);
    // Store ids are stream positions; the initial group holds 0..init_len.
    let mut next_id = 0u64;
    for &di in &groups[0] {
        let code = search::encode(&codebook, &data.vectors[di])?;
        store.insert(next_id, &code)?;
        next_id += 1;
    }

    let mut records = Vec::new();
    for g in update_range(cfg) {
        let query_group: &[usize] = match cfg.query_policy {
            QueryPolicy::Dynamic => &groups[g],
            QueryPolicy::FixedLastGroup => &groups[cfg.groups - 1],
        };
        // Ground truth over what the store can return: the resident initial
        // group plus the window's current contents.
        let recall = {
            let mut approx = Vec::with_capacity(query_group.len());
            let mut truth = Vec::with_capacity(query_group.len());
            for &qi in query_group {
                let q = data.vectors[qi].as_slice();
                approx.push(search::query(&store, &codebook, q, cfg.recall_r)?);
                let items = groups[0]
                    .iter()
                    .enumerate()
                    .map(|(pos, &di)| (pos as u64, data.vectors[di].as_slice()))
                    .chain(window.iter().map(|e| (e.id, e.vector.as_slice())));
                truth.push(search::exact_topk(items, q, 1)?[0].0);
            }
            search::recall_at_r(&approx, &truth, cfg.recall_r)?
        };

        let batch = group_vectors(data, &groups[g]);
        let ids: Vec<u64> = (0..batch.len() as u64).map(|offset| next_id + offset).collect();
        let started = Instant::now();
        let outcome = window.step_batch(&mut codebook, &ids, &batch, &cfg.budget)?;
        for (id, code) in ids.iter().zip(&outcome.report.codes) {
            store.insert(*id, code)?;
        }
        for id in &outcome.expired {
            store.remove(*id);
        }
        let update_seconds = started.elapsed().as_secs_f64();
        next_id += batch.len() as u64;

        records.push(IterationRecord {
            iteration: g,
            recall,
            update_seconds,
            mean_qe: outcome.report.per_subspace_error.iter().sum::<f64>() / batch.len() as f64,
            store_size: store.len(),
        });
    }

    Ok(WindowOutcome {
        records,
        codebook,
        store,
        window,
    })
}

/// Result of a convergence run: quantization error after every streaming
/// pass next to the batch-trained reference on the same data.
#[derive(Debug)]
pub struct ConvergenceOutcome {
    /// Mean squared quantization error over the whole dataset; index 0 is
    /// right after initialization, index `p` after streaming pass `p`.
    pub per_pass_mean_qe: Vec<f64>,
    /// The same error for a codebook batch-trained on the whole dataset.
    pub batch_mean_qe: f64,
    pub online_codebook: Codebook,
    pub batch_codebook: Codebook,
}

fn mean_qe_over(data: &Dataset, codebook: &Codebook) -> Result<f64> {
    let mut total = 0.0;
    for v in &data.vectors {
        total += encode_with_metrics(codebook, v)?.1.total();
    }
    Ok(total / data.vectors.len() as f64)
}

/// Initializes on group 0, then repeatedly streams the entire dataset
/// through the one-vector update rule — one full pass per effective
/// iteration — measuring quantization error over the whole dataset after
/// each pass.
pub fn run_convergence(data: &Dataset, cfg: &ProtocolConfig, passes: usize) -> Result<ConvergenceOutcome> {
    validate_protocol(cfg)?;
    if passes == 0 {
        return Err(Error::Config("need at least one pass".into()));
    }
    let groups = order_stream(data, cfg.order, cfg.groups)?;

    let init = group_vectors(data, &groups[0]);
    let mut online = train_codebook(&init, &cfg.pq, &cfg.train)?;

    let mut per_pass_mean_qe = vec![mean_qe_over(data, &online)?];
    for _pass in 0..passes {
        for group in &groups {
            for &di in group {
                opq_core::update::update_streaming(&mut online, &data.vectors[di])?;
            }
        }
        per_pass_mean_qe.push(mean_qe_over(data, &online)?);
    }

    let batch = train_codebook(&data.vectors, &cfg.pq, &cfg.train)?;
    let batch_mean_qe = mean_qe_over(data, &batch)?;

    Ok(ConvergenceOutcome {
        per_pass_mean_qe,
        batch_mean_qe,
        online_codebook: online,
        batch_codebook: batch,
    })
}

// ---------------------------------------------------------------------------
// Record files
// ---------------------------------------------------------------------------

/// Writes iteration records as CSV with the header
/// `iteration,recall,update_seconds,mean_qe,store_size`.
pub fn write_records_csv(path: &Path, records: &[IterationRecord]) -> io::Result<()> {
    io::write_atomic(path, |w| {
        use std::io::Write;
        writeln!(w, "iteration,recall,update_seconds,mean_qe,store_size")?;
        for r in records {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.iteration, r.recall, r.update_seconds, r.mean_qe, r.store_size
            )?;
        }
        Ok(())
    })
}

/// Writes per-pass quantization errors as CSV with the header `pass,mean_qe`.
pub fn write_convergence_csv(path: &Path, per_pass: &[f64]) -> io::Result<()> {
    io::write_atomic(path, |w| {
        use std::io::Write;
        writeln!(w, "pass,mean_qe")?;
        for (pass, qe) in per_pass.iter().enumerate() {
            writeln!(w, "{pass},{qe}")?;
        }
        Ok(())
    })
}
