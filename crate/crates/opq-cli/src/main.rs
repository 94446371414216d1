//! `opq` — train, update, and search compact product-quantization codes for
//! streaming vector data.
//!
//! Data goes to stdout, diagnostics (including an `effective-config:` replay
//! of every run's parameters) to stderr. Exit code 1 means bad usage, bad
//! configuration, or malformed file content; exit code 2 means the operating
//! system failed an I/O operation or a file was locked by another process.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use opq_cli::harness::{
    self, gen_gaussian_mixture, Dataset, ProtocolConfig, QueryPolicy, StreamOrder,
};
use opq_cli::io::{self, CsvLabels, FileLock, IoError};
use opq_core::search;
use opq_core::trainer::train_codebook;
use opq_core::update::update_minibatch;
use opq_core::{CodeStore, Codebook, ExpiryPolicy, PQConfig, TrainConfig, UpdateBudget, Vector};

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

const EXIT_USAGE: i32 = 1;
const EXIT_IO: i32 = 2;

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<opq_core::Error> for Failure {
    fn from(e: opq_core::Error) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: e.to_string(),
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        let code = match &e {
            IoError::Io { .. } | IoError::Locked { .. } => EXIT_IO,
            IoError::Format { .. } | IoError::Invalid { .. } => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

// ---------------------------------------------------------------------------
// Argument types
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
enum Format {
    Fvecs,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
enum OrderArg {
    AsIs,
    HalfOverlap,
    Disjoint,
}

impl From<OrderArg> for StreamOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::AsIs => StreamOrder::AsIs,
            OrderArg::HalfOverlap => StreamOrder::ByLabelHalfOverlap,
            OrderArg::Disjoint => StreamOrder::ByLabelDisjoint,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
enum QueryPolicyArg {
    Dynamic,
    FixedLast,
}

impl From<QueryPolicyArg> for QueryPolicy {
    fn from(q: QueryPolicyArg) -> Self {
        match q {
            QueryPolicyArg::Dynamic => QueryPolicy::Dynamic,
            QueryPolicyArg::FixedLast => QueryPolicy::FixedLastGroup,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
enum PolicyArg {
    /// Reverse each expired entry's insertion using its stored code.
    Remove,
    /// Re-assign the expired vector against the current codebook first.
    Reassign,
    /// Drop expired entries without touching the codebook.
    Keep,
}

impl From<PolicyArg> for ExpiryPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Remove => ExpiryPolicy::Remove,
            PolicyArg::Reassign => ExpiryPolicy::RemoveReassigned,
            PolicyArg::Keep => ExpiryPolicy::Keep,
        }
    }
}

fn parse_budget(s: &str) -> Result<UpdateBudget, String> {
    if s == "full" {
        return Ok(UpdateBudget::Full);
    }
    if let Some(rest) = s.strip_prefix("subspaces:") {
        let count: usize = rest
            .parse()
            .map_err(|_| format!("subspace count {rest:?} is not an integer"))?;
        return Ok(UpdateBudget::Subspaces(count));
    }
    if let Some(rest) = s.strip_prefix("codewords:") {
        let fraction: f64 = rest
            .parse()
            .map_err(|_| format!("codeword fraction {rest:?} is not a number"))?;
        return Ok(UpdateBudget::Subcodewords(fraction));
    }
    Err("expected `full`, `subspaces:<count>`, or `codewords:<fraction>`".into())
}

fn budget_name(budget: &UpdateBudget) -> String {
    match budget {
        UpdateBudget::Full => "full".into(),
        UpdateBudget::Subspaces(a) => format!("subspaces:{a}"),
        UpdateBudget::Subcodewords(f) => format!("codewords:{f}"),
    }
}

/// `N,D,C`: points, dimension, mixture components.
fn parse_gen(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected three comma-separated integers: points,dim,clusters".into());
    }
    let mut nums = [0usize; 3];
    for (slot, part) in nums.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| format!("{part:?} is not an integer"))?;
    }
    Ok((nums[0], nums[1], nums[2]))
}

// ---------------------------------------------------------------------------
// Command definitions
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "opq",
    version,
    about = "Streaming product quantization: train, update, and search compact vector codes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a codebook on a vector file with per-subspace k-means.
    Train(TrainArgs),
    /// Absorb new vectors into an existing codebook and store, in place.
    Update(UpdateArgs),
    /// Query a store and print the nearest stored ids per query.
    Query(QueryArgs),
    /// Run the growing-store streaming protocol and record per-iteration metrics.
    Simulate(SimulateArgs),
    /// Run the sliding-window streaming protocol with bounded memory.
    WindowSimulate(WindowSimulateArgs),
    /// Stream a fixed dataset repeatedly and compare against batch training.
    Convergence(ConvergenceArgs),
    /// Print shape and size facts about a codebook and store.
    Stats(StatsArgs),
}

#[derive(clap::Args)]
struct InputArgs {
    /// Vector file to read.
    #[arg(long)]
    input: PathBuf,
    /// File format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Treat the first CSV column as an integer class label.
    #[arg(long)]
    labeled: bool,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Number of subspaces the vectors are split into.
    #[arg(long)]
    m: usize,
    /// Codewords per subspace.
    #[arg(long)]
    k: usize,
    /// Upper bound on k-means iterations per subspace.
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    /// Relative error-drop tolerance that stops k-means.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Independent k-means seeding attempts; the lowest-error attempt wins.
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    /// Seed for centroid initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the trained codebook.
    #[arg(long)]
    out_codebook: PathBuf,
    /// Also encode the training vectors and write them as a store.
    #[arg(long)]
    out_store: Option<PathBuf>,
}

#[derive(clap::Args)]
struct UpdateArgs {
    /// Codebook file to update in place.
    #[arg(long)]
    codebook: PathBuf,
    /// Store file to update in place.
    #[arg(long)]
    store: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Vectors per mini-batch; 0 absorbs the whole input as one batch.
    #[arg(long, default_value_t = 0)]
    batch: usize,
    /// Update budget: `full`, `subspaces:<count>`, or `codewords:<fraction>`.
    #[arg(long, default_value = "full", value_parser = parse_budget)]
    budget: UpdateBudget,
}

#[derive(clap::Args)]
struct QueryArgs {
    /// Codebook file.
    #[arg(long)]
    codebook: PathBuf,
    /// Store file.
    #[arg(long)]
    store: PathBuf,
    /// Query vector file.
    #[arg(long)]
    queries: PathBuf,
    /// Query file format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Neighbors to return per query.
    #[arg(long, default_value_t = 20)]
    r: usize,
    /// Raw vectors whose row number equals the store id; enables an exact
    /// ground-truth recall report on stderr.
    #[arg(long)]
    base: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ProtocolArgs {
    /// Generate a Gaussian mixture instead of reading a file: points,dim,clusters.
    #[arg(long, value_parser = parse_gen)]
    gen: Option<(usize, usize, usize)>,
    /// Seed for dataset generation (with --gen).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Vector file to read instead of generating (CSV with --labeled for
    /// class-ordered streams).
    #[arg(long)]
    input: Option<PathBuf>,
    /// File format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Treat the first CSV column as an integer class label.
    #[arg(long)]
    labeled: bool,
    /// Number of subspaces.
    #[arg(long)]
    m: usize,
    /// Codewords per subspace.
    #[arg(long)]
    k: usize,
    /// Groups the stream is cut into; group 0 initializes the codebook.
    #[arg(long, default_value_t = 12)]
    groups: usize,
    /// Stream ordering.
    #[arg(long, value_enum, default_value_t = OrderArg::AsIs)]
    order: OrderArg,
    /// Seed for codebook initialization.
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
    /// Upper bound on k-means iterations per subspace.
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    /// Relative error-drop tolerance that stops k-means.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Independent k-means seeding attempts; the lowest-error attempt wins.
    #[arg(long, default_value_t = 1)]
    restarts: usize,
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Which vectors query the store at each iteration.
    #[arg(long, value_enum, default_value_t = QueryPolicyArg::Dynamic)]
    query_policy: QueryPolicyArg,
    /// Update budget: `full`, `subspaces:<count>`, or `codewords:<fraction>`.
    #[arg(long, default_value = "full", value_parser = parse_budget)]
    budget: UpdateBudget,
    /// Neighbors retrieved per query for recall@R.
    #[arg(long, default_value_t = 20)]
    r: usize,
    /// Where to write per-iteration records as CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the final codebook.
    #[arg(long)]
    out_codebook: Option<PathBuf>,
    /// Also write the final store.
    #[arg(long)]
    out_store: Option<PathBuf>,
}

#[derive(clap::Args)]
struct WindowSimulateArgs {
    #[command(flatten)]
    simulate: SimulateArgs,
    /// Window capacity in streamed vectors; the first group stays resident
    /// and does not count against it.
    #[arg(long)]
    window: usize,
    /// What expiry does to the codebook.
    #[arg(long, value_enum, default_value_t = PolicyArg::Remove)]
    policy: PolicyArg,
}

#[derive(clap::Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Streaming passes over the dataset.
    #[arg(long, default_value_t = 50)]
    passes: usize,
    /// Where to write per-pass quantization errors as CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct StatsArgs {
    /// Codebook file.
    #[arg(long)]
    codebook: PathBuf,
    /// Store file.
    #[arg(long)]
    store: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Input loading
// ---------------------------------------------------------------------------

fn infer_format(path: &Path, explicit: Option<Format>) -> Result<Format, Failure> {
    if let Some(f) = explicit {
        return Ok(f);
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("fvecs") => Ok(Format::Fvecs),
        Some("csv") => Ok(Format::Csv),
        _ => Err(Failure::usage(format!(
            "{}: cannot infer the format from the extension; pass --format",
            path.display()
        ))),
    }
}

fn load_vectors(
    path: &Path,
    format: Option<Format>,
    labeled: bool,
) -> Result<(Vec<Vector>, Option<Vec<i64>>), Failure> {
    match infer_format(path, format)? {
        Format::Fvecs => {
            if labeled {
                return Err(Failure::usage(
                    "--labeled requires a CSV input; fvecs files have no label column",
                ));
            }
            Ok((io::read_fvecs(path)?, None))
        }
        Format::Csv => {
            let labels = if labeled {
                CsvLabels::FirstColumn
            } else {
                CsvLabels::None
            };
            let data = io::read_csv(path, labels)?;
            Ok((data.vectors, data.labels))
        }
    }
}

/// Builds a harness dataset: generated, or loaded with labels remapped to
/// dense class ids (vectors without labels all land in class 0).
fn load_dataset(args: &ProtocolArgs) -> Result<(Dataset, String), Failure> {
    match (&args.gen, &args.input) {
        (Some((n, dim, clusters)), None) => {
            let (n, dim, clusters) = (*n, *dim, *clusters);
            let data = gen_gaussian_mixture(n, dim, clusters, args.seed)?;
            let source = format!("gen={n},{dim},{clusters} seed={}", args.seed);
            Ok((data, source))
        }
        (None, Some(path)) => {
            let (vectors, labels) = load_vectors(path, args.format, args.labeled)?;
            let labels = match labels {
                Some(raw) => {
                    let mut distinct: Vec<i64> = raw.clone();
                    distinct.sort_unstable();
                    distinct.dedup();
                    raw.iter()
                        .map(|l| distinct.binary_search(l).expect("label seen above"))
                        .collect()
                }
                None => vec![0; vectors.len()],
            };
            let source = format!("input={}", path.display());
            Ok((Dataset { vectors, labels }, source))
        }
        _ => Err(Failure::usage(
            "exactly one of --gen and --input must be given",
        )),
    }
}

fn dim_of(vectors: &[Vector]) -> usize {
    vectors.first().map(|v| v.len()).unwrap_or(0)
}

fn protocol_config(args: &ProtocolArgs, dim: usize) -> Result<ProtocolConfig, Failure> {
    let pq = PQConfig::new(dim, args.m, args.k)?;
    let mut cfg = ProtocolConfig::new(pq);
    cfg.train = TrainConfig {
        max_iterations: args.max_iters,
        rel_tol: args.tol,
        seed: args.train_seed,
        restarts: args.restarts,
    };
    cfg.order = args.order.into();
    cfg.groups = args.groups;
    Ok(cfg)
}

fn mean_quantization_error(codebook: &Codebook, vectors: &[Vector]) -> Result<f64, Failure> {
    let mut total = 0.0;
    for v in vectors {
        total += search::encode_with_metrics(codebook, v)?.1.total();
    }
    Ok(total / vectors.len() as f64)
}

fn summarize_records(records: &[harness::IterationRecord]) {
    let n = records.len() as f64;
    let mean_recall: f64 = records.iter().map(|r| r.recall).sum::<f64>() / n;
    let total_update: f64 = records.iter().map(|r| r.update_seconds).sum();
    println!("iterations={}", records.len());
    println!("mean_recall={mean_recall}");
    if let Some(last) = records.last() {
        println!("final_recall={}", last.recall);
        println!("final_mean_qe={}", last.mean_qe);
        println!("final_store_size={}", last.store_size);
    }
    println!("total_update_seconds={total_update}");
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_train(args: &TrainArgs) -> CmdResult {
    let (vectors, _) = load_vectors(&args.input.input, args.input.format, args.input.labeled)?;
    let dim = dim_of(&vectors);
    let pq = PQConfig::new(dim, args.m, args.k)?;
    let train = TrainConfig {
        max_iterations: args.max_iters,
        rel_tol: args.tol,
        seed: args.seed,
        restarts: args.restarts,
    };
    eprintln!(
        "effective-config: train input={} vectors={} dim={dim} m={} k={} max_iters={} tol={} restarts={} seed={} out_codebook={}",
        args.input.input.display(),
        vectors.len(),
        args.m,
        args.k,
        args.max_iters,
        args.tol,
        args.restarts,
        args.seed,
        args.out_codebook.display(),
    );

    let started = Instant::now();
    let codebook = train_codebook(&vectors, &pq, &train)?;
    let train_seconds = started.elapsed().as_secs_f64();
    io::save_codebook(&args.out_codebook, &codebook)?;

    if let Some(store_path) = &args.out_store {
        let mut store = CodeStore::new(pq);
        for (i, v) in vectors.iter().enumerate() {
            let code = search::encode(&codebook, v)?;
            store.insert(i as u64, &code)?;
        }
        io::save_store(store_path, &store)?;
        println!("store_entries={}", store.len());
    }

    println!("dim={dim}");
    println!("subspaces={}", args.m);
    println!("codewords={}", args.k);
    println!("bits_per_code={}", pq.bits_per_code());
    println!("trained_vectors={}", vectors.len());
    println!("training_mean_qe={}", mean_quantization_error(&codebook, &vectors)?);
    println!("train_seconds={train_seconds}");
    Ok(())
}

fn cmd_update(args: &UpdateArgs) -> CmdResult {
    let _codebook_lock = FileLock::acquire(&args.codebook)?;
    let _store_lock = FileLock::acquire(&args.store)?;

    let mut codebook = io::load_codebook(&args.codebook)?;
    let mut store = io::load_store(&args.store)?;
    if store.config() != codebook.config() {
        return Err(Failure::usage(format!(
            "store shape {}x{}x{} does not match codebook shape {}x{}x{}",
            store.config().dim(),
            store.config().num_subspaces(),
            store.config().num_codewords(),
            codebook.config().dim(),
            codebook.config().num_subspaces(),
            codebook.config().num_codewords(),
        )));
    }
    let (vectors, _) = load_vectors(&args.input.input, args.input.format, args.input.labeled)?;
    let batch_size = if args.batch == 0 {
        vectors.len()
    } else {
        args.batch
    };
    eprintln!(
        "effective-config: update codebook={} store={} input={} vectors={} batch={batch_size} budget={}",
        args.codebook.display(),
        args.store.display(),
        args.input.input.display(),
        vectors.len(),
        budget_name(&args.budget),
    );

    let mut next_id = store.last_id().map(|id| id + 1).unwrap_or(0);
    let started = Instant::now();
    let mut batches = 0usize;
    for batch in vectors.chunks(batch_size) {
        let report = update_minibatch(&mut codebook, batch, &args.budget)?;
        for code in &report.codes {
            store.insert(next_id, code)?;
            next_id += 1;
        }
        batches += 1;
        eprintln!(
            "batch {batches}: size={} update_seconds={} touched_cells={}",
            batch.len(),
            report.elapsed.as_secs_f64(),
            report.touched_cells.len(),
        );
    }
    let total_seconds = started.elapsed().as_secs_f64();

    io::save_codebook(&args.codebook, &codebook)?;
    io::save_store(&args.store, &store)?;

    println!("appended_entries={}", vectors.len());
    println!("batches={batches}");
    println!("total_update_seconds={total_seconds}");
    println!("entry_count={}", store.len());
    Ok(())
}

fn cmd_query(args: &QueryArgs) -> CmdResult {
    let codebook = io::load_codebook(&args.codebook)?;
    let store = io::load_store(&args.store)?;
    if store.config() != codebook.config() {
        return Err(Failure::usage(
            "store and codebook shapes do not match".to_string(),
        ));
    }
    let (queries, _) = load_vectors(&args.queries, args.format, false)?;
    eprintln!(
        "effective-config: query codebook={} store={} queries={} count={} r={}",
        args.codebook.display(),
        args.store.display(),
        args.queries.display(),
        queries.len(),
        args.r,
    );

    let base = match &args.base {
        Some(path) => {
            let vectors = io::read_fvecs(path)?;
            for (id, _) in store.packed_iter() {
                if id >= vectors.len() as u64 {
                    return Err(Failure::usage(format!(
                        "--base holds {} vectors but the store contains id {id}",
                        vectors.len()
                    )));
                }
            }
            Some(vectors)
        }
        None => None,
    };

    println!("query,rank,id,distance");
    let mut results = Vec::with_capacity(queries.len());
    for (qi, q) in queries.iter().enumerate() {
        let neighbors = search::query(&store, &codebook, q.as_slice(), args.r)?;
        for (rank, (id, distance)) in neighbors.iter().enumerate() {
            println!("{qi},{rank},{id},{distance}");
        }
        results.push(neighbors);
    }

    if let Some(base) = base {
        let mut truth = Vec::with_capacity(queries.len());
        for q in &queries {
            let items = store
                .packed_iter()
                .map(|(id, _)| (id, base[id as usize].as_slice()));
            truth.push(search::exact_topk(items, q.as_slice(), 1)?[0].0);
        }
        let recall = search::recall_at_r(&results, &truth, args.r)?;
        eprintln!("recall@{} = {recall}", args.r);
    }
    Ok(())
}

fn effective_protocol_line(
    name: &str,
    source: &str,
    cfg: &ProtocolConfig,
    extra: &str,
) -> String {
    format!(
        "effective-config: {name} {source} dim={} m={} k={} groups={} order={:?} train_seed={} max_iters={} tol={} restarts={}{extra}",
        cfg.pq.dim(),
        cfg.pq.num_subspaces(),
        cfg.pq.num_codewords(),
        cfg.groups,
        cfg.order,
        cfg.train.seed,
        cfg.train.max_iterations,
        cfg.train.rel_tol,
        cfg.train.restarts,
    )
}

fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let (data, source) = load_dataset(&args.protocol)?;
    let mut cfg = protocol_config(&args.protocol, dim_of(&data.vectors))?;
    cfg.budget = args.budget;
    cfg.query_policy = args.query_policy.into();
    cfg.recall_r = args.r;
    eprintln!(
        "{}",
        effective_protocol_line(
            "simulate",
            &source,
            &cfg,
            &format!(
                " query_policy={:?} budget={} r={}",
                cfg.query_policy,
                budget_name(&cfg.budget),
                cfg.recall_r
            ),
        )
    );

    let outcome = harness::run_dynamic_protocol(&data, &cfg)?;
    harness::write_records_csv(&args.out, &outcome.records)?;
    if let Some(path) = &args.out_codebook {
        io::save_codebook(path, &outcome.codebook)?;
    }
    if let Some(path) = &args.out_store {
        io::save_store(path, &outcome.store)?;
    }
    summarize_records(&outcome.records);
    Ok(())
}

fn cmd_window_simulate(args: &WindowSimulateArgs) -> CmdResult {
    let sim = &args.simulate;
    let (data, source) = load_dataset(&sim.protocol)?;
    let mut cfg = protocol_config(&sim.protocol, dim_of(&data.vectors))?;
    cfg.budget = sim.budget;
    cfg.query_policy = sim.query_policy.into();
    cfg.recall_r = sim.r;
    eprintln!(
        "{}",
        effective_protocol_line(
            "window-simulate",
            &source,
            &cfg,
            &format!(
                " query_policy={:?} budget={} r={} window={} policy={:?}",
                cfg.query_policy,
                budget_name(&cfg.budget),
                cfg.recall_r,
                args.window,
                args.policy,
            ),
        )
    );

    let outcome =
        harness::run_window_protocol(&data, &cfg, Some(args.window), args.policy.into())?;
    harness::write_records_csv(&sim.out, &outcome.records)?;
    if let Some(path) = &sim.out_codebook {
        io::save_codebook(path, &outcome.codebook)?;
    }
    if let Some(path) = &sim.out_store {
        io::save_store(path, &outcome.store)?;
    }
    summarize_records(&outcome.records);
    println!("window_capacity={}", args.window);
    println!("window_len={}", outcome.window.len());
    Ok(())
}

fn cmd_convergence(args: &ConvergenceArgs) -> CmdResult {
    let (data, source) = load_dataset(&args.protocol)?;
    let cfg = protocol_config(&args.protocol, dim_of(&data.vectors))?;
    eprintln!(
        "{}",
        effective_protocol_line("convergence", &source, &cfg, &format!(" passes={}", args.passes))
    );

    let outcome = harness::run_convergence(&data, &cfg, args.passes)?;
    harness::write_convergence_csv(&args.out, &outcome.per_pass_mean_qe)?;

    let initial = outcome.per_pass_mean_qe[0];
    let final_qe = *outcome.per_pass_mean_qe.last().unwrap();
    println!("passes={}", args.passes);
    println!("initial_mean_qe={initial}");
    println!("final_mean_qe={final_qe}");
    println!("batch_mean_qe={}", outcome.batch_mean_qe);
    println!("final_to_batch_ratio={}", final_qe / outcome.batch_mean_qe);
    Ok(())
}

fn cmd_stats(args: &StatsArgs) -> CmdResult {
    let codebook = io::load_codebook(&args.codebook)?;
    let cfg = *codebook.config();
    eprintln!(
        "effective-config: stats codebook={}{}",
        args.codebook.display(),
        args.store
            .as_ref()
            .map(|p| format!(" store={}", p.display()))
            .unwrap_or_default(),
    );

    println!("dim={}", cfg.dim());
    println!("subspaces={}", cfg.num_subspaces());
    println!("codewords={}", cfg.num_codewords());
    println!("sub_dim={}", cfg.sub_dim());
    println!("bits_per_code={}", cfg.bits_per_code());
    println!("code_bytes={}", cfg.code_bytes());
    println!("cells={}", cfg.num_cells());
    let counter_total: u64 = (0..cfg.num_subspaces())
        .map(|m| codebook.subspace_counter_total(m))
        .sum();
    println!("counter_total={counter_total}");
    let cb_bytes = std::fs::metadata(&args.codebook)
        .map_err(|e| IoError::Io {
            path: args.codebook.clone(),
            source: e,
        })?
        .len();
    println!("codebook_file_bytes={cb_bytes}");

    if let Some(store_path) = &args.store {
        let store = io::load_store(store_path)?;
        if store.config() != &cfg {
            return Err(Failure::usage(
                "store and codebook shapes do not match".to_string(),
            ));
        }
        let store_bytes = std::fs::metadata(store_path)
            .map_err(|e| IoError::Io {
                path: store_path.clone(),
                source: e,
            })?
            .len();
        println!("entry_count={}", store.len());
        println!("store_file_bytes={store_bytes}");
        println!("store_header_bytes={}", io::STORE_HEADER_BYTES);
        println!("bytes_per_entry={}", 8 + cfg.code_bytes());
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Update(args) => cmd_update(args),
        Command::Query(args) => cmd_query(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::WindowSimulate(args) => cmd_window_simulate(args),
        Command::Convergence(args) => cmd_convergence(args),
        Command::Stats(args) => cmd_stats(args),
    }
}

fn main() {
    let cli = Cli::try_parse().unwrap_or_else(|e| {
        let _ = e.print();
        std::process::exit(if e.use_stderr() { EXIT_USAGE } else { 0 });
    });
    if let Err(failure) = run(cli) {
        eprintln!("error: {}", failure.message);
        std::process::exit(failure.code);
    }
}
