//! Scratch calibration runs for picking acceptance-test tolerances.

use std::time::Instant;

use opq_cli::harness::{self, ProtocolConfig, StreamOrder};
use opq_core::search::CodeStore;
use opq_core::update::update_minibatch;
use opq_core::{Code, Codebook, PQConfig, UpdateBudget, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    match which.as_str() {
        "conv" => conv(),
        "probe" => probe(),
        "indep" => indep(),
        "budget" => budget(),
        _ => {
            conv();
            indep();
            budget();
        }
    }
}

fn probe() {
    use opq_core::trainer::{train_codebook, TrainConfig};
    for gen_seed in [77u64, 1, 2, 3] {
        let data = harness::gen_gaussian_mixture(10_000, 32, 16, gen_seed).unwrap();
        let pq = PQConfig::new(32, 4, 16).unwrap();
        let init_slice: Vec<Vector> = data.vectors[..10_000 / 12].to_vec();
        for train_seed in 0..6u64 {
            let tc = TrainConfig {
                seed: train_seed,
                ..TrainConfig::default()
            };
            let full = train_codebook(&data.vectors, &pq, &tc).unwrap();
            let part = train_codebook(&init_slice, &pq, &tc).unwrap();
            let qe = |cb: &Codebook| {
                let mut total = 0.0;
                for v in &data.vectors {
                    total += opq_core::search::encode_with_metrics(cb, v).unwrap().1.total();
                }
                total / data.vectors.len() as f64
            };
            println!(
                "probe gen={gen_seed} train={train_seed}: full={:.2} group0={:.2}",
                qe(&full),
                qe(&part)
            );
        }
    }
}

fn conv() {
    for gen_seed in [77u64, 1, 2] {
        for restarts in [10usize, 20] {
            let t0 = Instant::now();
            let data = harness::gen_gaussian_mixture(10_000, 32, 16, gen_seed).unwrap();
            let mut cfg = ProtocolConfig::new(PQConfig::new(32, 4, 16).unwrap());
            cfg.groups = 12;
            cfg.train.restarts = restarts;
            let out = harness::run_convergence(&data, &cfg, 50).unwrap();
            let online = *out.per_pass_mean_qe.last().unwrap();
            let batch = out.batch_mean_qe;
            println!(
                "conv gen={gen_seed} restarts={restarts}: online={online:.4} batch={batch:.4} rel={:+.4} init={:.4} p1={:.4} elapsed={:.2?}",
                (online - batch) / batch,
                out.per_pass_mean_qe[0],
                out.per_pass_mean_qe[1],
                t0.elapsed()
            );
        }
    }
}

fn indep() {
    let t0 = Instant::now();
    let cfg = PQConfig::new(128, 16, 256).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cells = cfg.num_cells();
    let values: Vec<f64> = (0..cells * cfg.sub_dim())
        .map(|_| rng.gen::<f64>() * 10.0 - 5.0)
        .collect();
    let base = Codebook::from_parts(cfg, values, vec![50; cells]).unwrap();

    let mut make_store = |n: u64| {
        let mut store = CodeStore::new(cfg);
        for id in 0..n {
            let code = Code::from_indices(
                (0..cfg.num_subspaces())
                    .map(|_| rng.gen_range(0..cfg.num_codewords()) as u16)
                    .collect(),
                &cfg,
            )
            .unwrap();
            store.insert(id, &code).unwrap();
        }
        store
    };
    let mut small = make_store(10_000);
    let mut big = make_store(100_000);

    let b = 512usize;
    let reps = 21;
    let batches: Vec<Vec<Vector>> = (0..reps)
        .map(|_| {
            (0..b)
                .map(|_| {
                    Vector::new((0..128).map(|_| rng.gen::<f64>() * 10.0 - 5.0).collect())
                        .unwrap()
                })
                .collect()
        })
        .collect();

    let mut t_small: Vec<f64> = Vec::new();
    let mut t_big: Vec<f64> = Vec::new();
    for batch in &batches {
        for (store, base_n, ts) in [
            (&mut small, 10_000u64, &mut t_small),
            (&mut big, 100_000u64, &mut t_big),
        ] {
            let mut cb = base.clone();
            let t = Instant::now();
            let report = update_minibatch(&mut cb, batch, &UpdateBudget::Full).unwrap();
            for (i, code) in report.codes.iter().enumerate() {
                store.insert(base_n + i as u64, code).unwrap();
            }
            ts.push(t.elapsed().as_secs_f64());
            for i in 0..batch.len() as u64 {
                store.remove(base_n + i);
            }
        }
    }
    t_small.sort_by(f64::total_cmp);
    t_big.sort_by(f64::total_cmp);
    let ms = t_small[reps / 2];
    let mb = t_big[reps / 2];
    println!(
        "indep: median small={:.3}ms big={:.3}ms ratio={:.4} elapsed={:.2?}",
        ms * 1e3,
        mb * 1e3,
        mb / ms,
        t0.elapsed()
    );
}

fn budget() {
    let alphas = [1usize, 4, 8, 16];
    let seeds = [40u64, 41, 42, 43, 44];
    // applies[a][s], recalls[a][s]
    let mut applies = vec![Vec::new(); alphas.len()];
    let mut recalls = vec![Vec::new(); alphas.len()];
    for &seed in &seeds {
        let data = harness::gen_gaussian_mixture(12_000, 128, 16, seed).unwrap();
        for (ai, &alpha) in alphas.iter().enumerate() {
            let t0 = Instant::now();
            let mut cfg = ProtocolConfig::new(PQConfig::new(128, 16, 256).unwrap());
            cfg.groups = 12;
            cfg.order = StreamOrder::ByLabelHalfOverlap;
            cfg.recall_r = 50;
            cfg.budget = UpdateBudget::Subspaces(alpha);
            let out = harness::run_dynamic_protocol(&data, &cfg).unwrap();
            let mean_apply =
                out.apply_seconds.iter().sum::<f64>() / out.apply_seconds.len() as f64;
            let mean_recall =
                out.records.iter().map(|r| r.recall).sum::<f64>() / out.records.len() as f64;
            applies[ai].push(mean_apply);
            recalls[ai].push(mean_recall);
            eprintln!(
                "  alpha={alpha} seed={seed}: apply={:.1}us recall={:.4} run={:.2?}",
                mean_apply * 1e6,
                mean_recall,
                t0.elapsed()
            );
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let med_apply: Vec<f64> = applies.iter_mut().map(median).collect();
    let med_recall: Vec<f64> = recalls.iter_mut().map(median).collect();
    for (i, &alpha) in alphas.iter().enumerate() {
        println!(
            "budget alpha={alpha}: median apply={:.1}us median recall={:.4}",
            med_apply[i] * 1e6,
            med_recall[i]
        );
    }
    println!(
        "apply medians strictly increasing: {}",
        med_apply.windows(2).all(|w| w[0] < w[1])
    );
    println!(
        "recall a16={:.4} a1={:.4} ok={}",
        med_recall[3],
        med_recall[0],
        med_recall[3] >= med_recall[0]
    );
}
