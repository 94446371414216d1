//! Property-based invariants over randomly generated shapes and data.

use proptest::prelude::*;

use opq_core::search::{pack_code, unpack_code};
use opq_core::{
    search, split, subspace_error, update, Code, Codebook, PQConfig, SlidingWindow, UpdateBudget,
    Vector,
};

/// A valid shape plus matching random codebook contents.
fn arb_codebook(max_m: usize, max_d: usize, ks: &'static [usize]) -> impl Strategy<Value = Codebook> {
    (1..=max_m, 1..=max_d, proptest::sample::select(ks)).prop_flat_map(|(m, d, k)| {
        let cfg = PQConfig::new(m * d, m, k).unwrap();
        let n_values = cfg.num_cells() * cfg.sub_dim();
        (
            proptest::collection::vec(-100.0..100.0f64, n_values),
            proptest::collection::vec(1u64..50, cfg.num_cells()),
        )
            .prop_map(move |(values, counters)| {
                Codebook::from_parts(cfg, values, counters).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn splitting_then_concatenating_is_identity(
        (m, d) in (1usize..=6, 1usize..=5),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cfg = PQConfig::new(m * d, m, 2).unwrap();
        let x = Vector::new((0..m * d).map(|_| rng.gen::<f64>() * 50.0 - 25.0).collect()).unwrap();
        let blocks = split(&x, &cfg).unwrap();
        prop_assert_eq!(blocks.len(), m);
        let mut rebuilt = Vec::new();
        for (i, b) in blocks.iter().enumerate() {
            prop_assert_eq!(b.subspace(), i);
            prop_assert_eq!(b.values().len(), d);
            rebuilt.extend_from_slice(b.values());
        }
        prop_assert_eq!(rebuilt.as_slice(), x.as_slice());
    }

    #[test]
    fn packed_codes_round_trip(
        m in 1usize..=5,
        k in proptest::sample::select(&[2usize, 3, 16, 256, 257, 65_536]),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cfg = PQConfig::new(m, m, k).unwrap();
        let indices: Vec<u16> = (0..m).map(|_| rng.gen_range(0..k) as u16).collect();
        let code = Code::from_indices(indices, &cfg).unwrap();
        let bytes = pack_code(&code, &cfg).unwrap();
        prop_assert_eq!(bytes.len(), cfg.code_bytes());
        let expected_width = if k <= 256 { m } else { 2 * m };
        prop_assert_eq!(bytes.len(), expected_width);
        prop_assert_eq!(unpack_code(&bytes, &cfg).unwrap(), code);
    }

    #[test]
    fn table_distance_decomposes_over_subspaces(
        cb in arb_codebook(4, 4, &[2, 5, 9]),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cfg = *cb.config();
        let q: Vec<f64> = (0..cfg.dim()).map(|_| rng.gen::<f64>() * 200.0 - 100.0).collect();
        let indices: Vec<u16> = (0..cfg.num_subspaces())
            .map(|_| rng.gen_range(0..cfg.num_codewords()) as u16)
            .collect();
        let code = Code::from_indices(indices, &cfg).unwrap();

        let table = search::build_distance_table(&cb, &q).unwrap();
        let adc = search::approx_distance(&table, &code).unwrap();
        let rec = search::reconstruct(&cb, &code).unwrap();
        let direct = subspace_error(&q, rec.as_slice()).unwrap();
        let scale = direct.abs().max(1.0);
        prop_assert!((adc - direct).abs() <= 1e-9 * scale, "{} vs {}", adc, direct);
    }

    #[test]
    fn encoding_minimizes_reconstruction_distance(
        cb in arb_codebook(3, 2, &[2, 3, 4]),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cfg = *cb.config();
        let x = Vector::new(
            (0..cfg.dim()).map(|_| rng.gen::<f64>() * 200.0 - 100.0).collect(),
        ).unwrap();
        let code = search::encode(&cb, &x).unwrap();
        let chosen = subspace_error(
            x.as_slice(),
            search::reconstruct(&cb, &code).unwrap().as_slice(),
        ).unwrap();

        // Exhaustive scan over the full cross-product of sub-indices.
        let k = cfg.num_codewords();
        let m = cfg.num_subspaces();
        let total = k.pow(m as u32);
        for combo in 0..total {
            let mut rest = combo;
            let mut indices = Vec::with_capacity(m);
            for _ in 0..m {
                indices.push((rest % k) as u16);
                rest /= k;
            }
            let candidate = Code::from_indices(indices, &cfg).unwrap();
            let dist = subspace_error(
                x.as_slice(),
                search::reconstruct(&cb, &candidate).unwrap().as_slice(),
            ).unwrap();
            prop_assert!(
                chosen <= dist,
                "code {:?} at {} beaten by {:?} at {}",
                code.indices(), chosen, candidate.indices(), dist
            );
        }
    }

    #[test]
    fn full_updates_conserve_counter_mass(
        cb in arb_codebook(3, 3, &[2, 4, 7]),
        batch_len in 1usize..24,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut cb = cb;
        let cfg = *cb.config();
        let before: Vec<u64> = (0..cfg.num_subspaces())
            .map(|m| cb.subspace_counter_total(m))
            .collect();
        let batch: Vec<Vector> = (0..batch_len)
            .map(|_| Vector::new((0..cfg.dim()).map(|_| rng.gen::<f64>() * 100.0).collect()).unwrap())
            .collect();
        update::update_minibatch(&mut cb, &batch, &UpdateBudget::Full).unwrap();
        for m in 0..cfg.num_subspaces() {
            prop_assert_eq!(cb.subspace_counter_total(m), before[m] + batch_len as u64);
        }
    }

    #[test]
    fn budgeted_updates_conserve_mass_only_where_selected(
        cb in arb_codebook(4, 2, &[3, 5]),
        batch_len in 1usize..16,
        alpha in 1usize..=4,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut cb = cb;
        let cfg = *cb.config();
        let alpha = alpha.min(cfg.num_subspaces());
        let before: Vec<u64> = (0..cfg.num_subspaces())
            .map(|m| cb.subspace_counter_total(m))
            .collect();
        let batch: Vec<Vector> = (0..batch_len)
            .map(|_| Vector::new((0..cfg.dim()).map(|_| rng.gen::<f64>() * 100.0).collect()).unwrap())
            .collect();
        let report =
            update::update_minibatch(&mut cb, &batch, &UpdateBudget::Subspaces(alpha)).unwrap();
        let selected: std::collections::BTreeSet<usize> =
            report.touched_cells.iter().map(|&(m, _)| m).collect();
        prop_assert!(selected.len() <= alpha);
        for m in 0..cfg.num_subspaces() {
            let expected = if selected.contains(&m) {
                before[m] + batch_len as u64
            } else {
                before[m]
            };
            prop_assert_eq!(cb.subspace_counter_total(m), expected);
        }
    }

    #[test]
    fn insert_then_expire_restores_touched_codewords(
        cb in arb_codebook(3, 3, &[2, 4]),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut cb = cb;
        let cfg = *cb.config();
        let before = cb.clone();
        let x = Vector::new(
            (0..cfg.dim()).map(|_| rng.gen::<f64>() * 200.0 - 100.0).collect(),
        ).unwrap();

        let mut window = SlidingWindow::new(Some(4)).unwrap();
        window.insert(&mut cb, 1, x).unwrap();
        window.delete_oldest(&mut cb, 1).unwrap();

        for m in 0..cfg.num_subspaces() {
            for k in 0..cfg.num_codewords() {
                prop_assert_eq!(cb.counter(m, k), before.counter(m, k));
                for (got, want) in cb.codeword(m, k).iter().zip(before.codeword(m, k)) {
                    let scale = want.abs().max(1.0);
                    prop_assert!(
                        (got - want).abs() <= 1e-9 * scale,
                        "cell ({}, {}): {} vs {}", m, k, got, want
                    );
                }
            }
        }
    }

    #[test]
    fn queries_return_sorted_unique_ids(
        cb in arb_codebook(3, 2, &[4, 8]),
        n in 1usize..40,
        r in 0usize..12,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cfg = *cb.config();
        let mut store = search::CodeStore::new(cfg);
        for id in 0..n as u64 {
            let indices: Vec<u16> = (0..cfg.num_subspaces())
                .map(|_| rng.gen_range(0..cfg.num_codewords()) as u16)
                .collect();
            store.insert(id, &Code::from_indices(indices, &cfg).unwrap()).unwrap();
        }
        let q: Vec<f64> = (0..cfg.dim()).map(|_| rng.gen::<f64>() * 100.0 - 50.0).collect();
        let results = search::query(&store, &cb, &q, r).unwrap();
        prop_assert_eq!(results.len(), r.min(n));
        for pair in results.windows(2) {
            let ordered = pair[0].1 < pair[1].1
                || (pair[0].1 == pair[1].1 && pair[0].0 < pair[1].0);
            prop_assert!(ordered, "unsorted: {:?}", results);
        }
    }
}

#[test]
fn recall_is_perfect_when_approximation_is_exact() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    let data: Vec<(u64, Vec<f64>)> = (0..50)
        .map(|id| (id, (0..4).map(|_| rng.gen::<f64>()).collect()))
        .collect();
    let queries: Vec<Vec<f64>> = (0..20).map(|_| (0..4).map(|_| rng.gen::<f64>()).collect()).collect();

    let mut approx = Vec::new();
    let mut truth = Vec::new();
    for q in &queries {
        let items = data.iter().map(|(id, v)| (*id, v.as_slice()));
        let top = search::exact_topk(items, q, 5).unwrap();
        truth.push(top[0].0);
        approx.push(top);
    }
    assert_eq!(search::recall_at_r(&approx, &truth, 5).unwrap(), 1.0);
    assert_eq!(search::recall_at_r(&approx, &truth, 1).unwrap(), 1.0);
}
