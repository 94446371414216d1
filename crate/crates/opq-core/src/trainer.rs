//! Batch codebook training: seeded k-means++ initialisation plus Lloyd
//! iterations, run independently per subspace.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::vector::{sq_dist, sub_block};
use crate::{Codebook, Error, PQConfig, Result, Vector};

/// Knobs for batch training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Upper bound on Lloyd iterations (mean recomputations).
    pub max_iterations: usize,
    /// Stop once the relative drop in total quantization error between
    /// consecutive iterations falls to this value or below.
    pub rel_tol: f64,
    /// Seed for centroid initialisation; equal seeds give identical models.
    pub seed: u64,
    /// Independent seeding attempts per clustering; the attempt with the
    /// lowest total error wins and ties keep the earliest. Must be at least
    /// 1. More attempts cost proportionally more time but make landing in a
    /// poor local optimum exponentially less likely.
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iterations: 100,
            rel_tol: 1e-6,
            seed: 0,
            restarts: 1,
        }
    }
}

/// Result of clustering one point set.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOutcome {
    /// `k` centroids, stored as `k` consecutive rows of `d` values.
    pub centroids: Vec<f64>,
    /// Index of the centroid each input point belongs to.
    pub assignments: Vec<usize>,
    /// Total quantization error of the returned assignment.
    pub total_error: f64,
    /// Total error observed after each assignment pass, in order.
    pub error_trace: Vec<f64>,
}

/// Nearest centroid for `point` among `k` rows of `centroids`; ties resolve
/// to the lowest index.
fn nearest_centroid(point: &[f64], centroids: &[f64], k: usize) -> (usize, f64) {
    let d = point.len();
    let mut best = 0usize;
    let mut best_dist = sq_dist(point, &centroids[0..d]);
    for c in 1..k {
        let dist = sq_dist(point, &centroids[c * d..(c + 1) * d]);
        if dist < best_dist {
            best = c;
            best_dist = dist;
        }
    }
    (best, best_dist)
}

/// k-means++ seeding: first centroid uniform, the rest drawn with probability
/// proportional to the squared distance from the nearest centroid chosen so
/// far. Once every point coincides with a chosen centroid the remaining slots
/// are filled with copies of the already-chosen centroids, in order.
fn seed_centroids(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len();
    let d = points[0].len();
    let mut centroids = Vec::with_capacity(k * d);

    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(points[first]);

    // Squared distance from each point to its nearest chosen centroid.
    let mut dist2: Vec<f64> = points.iter().map(|p| sq_dist(p, points[first])).collect();

    for chosen in 1..k {
        let total: f64 = dist2.iter().sum();
        if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut cumulative = 0.0;
            let mut pick = None;
            let mut last_positive = 0;
            for (i, &w) in dist2.iter().enumerate() {
                if w > 0.0 {
                    last_positive = i;
                }
                cumulative += w;
                if target < cumulative {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding in the cumulative sum can leave the target just past
            // the end; fall back to the last point with positive weight.
            let pick = pick.unwrap_or(last_positive);
            centroids.extend_from_slice(points[pick]);
            for (w, p) in dist2.iter_mut().zip(points) {
                let dist = sq_dist(p, points[pick]);
                if dist < *w {
                    *w = dist;
                }
            }
        } else {
            // Fewer distinct points than centroids: duplicate earlier picks.
            let src = chosen % ((centroids.len() / d).max(1));
            let row: Vec<f64> = centroids[src * d..(src + 1) * d].to_vec();
            centroids.extend_from_slice(&row);
        }
    }
    centroids
}

/// Lloyd's k-means over one point set.
///
/// Deterministic given `config.seed`: seeding uses a seeded generator and all
/// ties (assignment, empty-cluster reseeding) resolve to the lowest index.
/// Iteration stops when the relative drop in total error reaches
/// `config.rel_tol` or `config.max_iterations` mean updates have run. With
/// `config.restarts > 1` the whole procedure reruns from fresh seeds drawn
/// off the same generator and the lowest-error attempt is kept. The
/// returned assignment is always computed against the returned centroids, and
/// every cluster centroid equals the mean of its assigned points (clusters
/// left empty keep their previous position).
pub fn lloyd_kmeans(points: &[&[f64]], k: usize, config: &TrainConfig) -> Result<KMeansOutcome> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if k == 0 {
        return Err(Error::Config(format!("k must be at least 1, got {k}")));
    }
    if config.restarts == 0 {
        return Err(Error::Config(format!(
            "restarts must be at least 1, got {}",
            config.restarts
        )));
    }
    let d = points[0].len();
    if d == 0 {
        return Err(Error::EmptyInput);
    }
    for p in points {
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: p.len(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<KMeansOutcome> = None;
    for _attempt in 0..config.restarts {
        let candidate = lloyd_once(points, k, config, &mut rng);
        if best.as_ref().is_none_or(|b| candidate.total_error < b.total_error) {
            best = Some(candidate);
        }
    }
    Ok(best.expect("at least one attempt ran"))
}

/// One seeding-plus-Lloyd attempt; inputs are pre-validated.
fn lloyd_once(
    points: &[&[f64]],
    k: usize,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> KMeansOutcome {
    let d = points[0].len();
    let n = points.len();
    let mut centroids = seed_centroids(points, k, rng);

    let mut assignments = vec![0usize; n];
    let mut point_errors = vec![0.0f64; n];
    let mut error_trace = Vec::new();
    let mut previous_error: Option<f64> = None;

    for _iteration in 0..=config.max_iterations {
        let mut total_error = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, dist) = nearest_centroid(p, &centroids, k);
            assignments[i] = c;
            point_errors[i] = dist;
            total_error += dist;
        }
        error_trace.push(total_error);

        let converged = match previous_error {
            Some(prev) if prev > 0.0 => (prev - total_error) / prev <= config.rel_tol,
            Some(_) => true, // previous error was zero; it cannot improve
            None => false,
        };
        previous_error = Some(total_error);
        if converged || error_trace.len() > config.max_iterations {
            break;
        }

        // Mean update.
        let mut sums = vec![0.0f64; k * d];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            let row = &mut sums[c * d..(c + 1) * d];
            for (s, v) in row.iter_mut().zip(*p) {
                *s += v;
            }
        }
        let mut empties = Vec::new();
        for c in 0..k {
            if counts[c] == 0 {
                empties.push(c);
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in centroids[c * d..(c + 1) * d].iter_mut().zip(&sums[c * d..]) {
                *dst = s * inv;
            }
        }
        if !empties.is_empty() {
            // Re-seed each empty cluster at the point currently carrying the
            // largest quantization error (ties to the lower point index).
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                point_errors[b]
                    .partial_cmp(&point_errors[a])
                    .unwrap_or(core::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            for (slot, c) in empties.iter().enumerate() {
                let src = points[order[slot % n]];
                centroids[c * d..(c + 1) * d].copy_from_slice(src);
            }
        }
    }

    let total_error = *error_trace.last().unwrap_or(&0.0);
    KMeansOutcome {
        centroids,
        assignments,
        total_error,
        error_trace,
    }
}

/// Trains a fresh codebook on `data`, one independent k-means per subspace.
///
/// Afterwards each cell's codeword is a centroid of that subspace's blocks
/// and its counter is the number of training points assigned to it, so the
/// online update rules can continue from the training state seamlessly.
/// Subspaces use seeds derived from `train.seed`, keeping the whole model a
/// pure function of data and configuration.
pub fn train_codebook(data: &[Vector], config: &PQConfig, train: &TrainConfig) -> Result<Codebook> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    for v in data {
        if v.len() != config.dim() {
            return Err(Error::DimensionMismatch {
                expected: config.dim(),
                actual: v.len(),
            });
        }
    }

    let m_count = config.num_subspaces();
    let k = config.num_codewords();
    let d = config.sub_dim();
    let mut codewords = Vec::with_capacity(config.num_cells() * d);
    let mut counters = Vec::with_capacity(config.num_cells());

    for m in 0..m_count {
        let blocks: Vec<&[f64]> = data.iter().map(|v| sub_block(v, config, m)).collect();
        let sub_train = TrainConfig {
            seed: subspace_seed(train.seed, m),
            ..*train
        };
        let outcome = lloyd_kmeans(&blocks, k, &sub_train)?;
        codewords.extend_from_slice(&outcome.centroids);
        let mut counts = vec![0u64; k];
        for &c in &outcome.assignments {
            counts[c] += 1;
        }
        counters.extend_from_slice(&counts);
    }

    Codebook::from_parts(*config, codewords, counters)
}

/// Derives a per-subspace seed so subspaces are independently randomised but
/// the whole training run stays a function of one user-facing seed.
fn subspace_seed(seed: u64, m: usize) -> u64 {
    seed ^ (m as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}
