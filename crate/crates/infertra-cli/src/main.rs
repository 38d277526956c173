//! Command-line front end: generate synthetic data, learn a mobility model,
//! infer uncertain trajectories, query results, and run evaluations.
//!
//! Exit codes: 0 success, 1 input or validation failure, 2 usage error,
//! 3 inference infeasible (a pair unreachable under the model).

use clap::{Args, Parser, Subcommand};
use infertra::datagen::{bimodal_fork_model, grid_network, simulate_corpus, PlantedModel};
use infertra::eval::{kfold_eval, EvalConfig};
use infertra::inference::{RwrConfig, TauMode};
use infertra::network::RoadNetwork;
use infertra::nmm::{learn, LearnParams, NetworkMobilityModel};
use infertra::time::TimeOfDay;
use infertra::trajectory::{read_observations, read_trajectories, write_trajectories};
use infertra::uncertain::UncertainTrajectory;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "infertra",
    version,
    about = "Uncertain-trajectory inference on road networks",
    after_help = "Set INFERTRA_LOG=info (or debug) for progress output."
)]
struct Cli {
    /// Worker threads (0 = one per CPU core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Print every engine default as JSON and exit.
    #[arg(long, global = true)]
    show_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic network and trajectory corpus.
    Gen(GenArgs),
    /// Learn a network mobility model from historical trajectories.
    Learn(LearnArgs),
    /// Infer an uncertain trajectory from a sparse observation.
    Infer(InferArgs),
    /// Query a stored uncertain-trajectory file.
    Query(QueryArgs),
    /// K-fold cross-validation with sampling-interval degradation.
    Eval(EvalArgs),
    /// Regenerate (or check) the canonical fixture directory.
    Fixtures(FixturesArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output directory for nodes.csv, edges.csv and trajectories.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    rows: usize,
    #[arg(long, default_value_t = 5)]
    cols: usize,
    /// Grid spacing in meters.
    #[arg(long, default_value_t = 1000.0)]
    spacing: f64,
    /// Number of trajectories to simulate.
    #[arg(long, default_value_t = 1000)]
    trips: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    min_hops: usize,
    #[arg(long, default_value_t = 8)]
    max_hops: usize,
    /// Corpus pattern: uniform preferences on the requested grid, or the
    /// fixed 4x4 time-flipping fork.
    #[arg(long, default_value = "uniform", value_parser = ["uniform", "bimodal"])]
    pattern: String,
}

#[derive(Args)]
struct LearnArgs {
    /// Network: a .json file or a directory with nodes.csv/edges.csv.
    #[arg(long)]
    network: PathBuf,
    /// Trajectory database (JSON Lines).
    #[arg(long)]
    trajectories: PathBuf,
    /// Output model file.
    #[arg(long)]
    model: PathBuf,
    /// Markov order m.
    #[arg(long, default_value_t = infertra::nmm::DEFAULT_ORDER)]
    order: usize,
    /// Sliding window length, seconds.
    #[arg(long, default_value_t = infertra::nmm::DEFAULT_WINDOW_SECONDS)]
    delta: u32,
    #[arg(long, default_value_t = infertra::nmm::DEFAULT_EPSILON)]
    epsilon: f64,
    /// Window stride, seconds.
    #[arg(long, default_value_t = infertra::nmm::DEFAULT_STRIDE_SECONDS)]
    stride: u32,
    /// Force a fixed time-bin count instead of learning it.
    #[arg(long)]
    bins: Option<usize>,
    /// Fallback speed for unseen edges, m/s.
    #[arg(long, default_value_t = infertra::nmm::DEFAULT_SPEED_FALLBACK)]
    speed_fallback: f64,
}

#[derive(Args, Clone)]
struct RwrArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Post-arrival rejection policy.
    #[arg(long, default_value = "zero", value_parser = ["zero", "temporal"])]
    tau_mode: String,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    /// Successful samples per convergence batch.
    #[arg(long, default_value_t = 100)]
    batch: usize,
    /// Consecutive stable batches required.
    #[arg(long, default_value_t = 3)]
    stability_window: usize,
    #[arg(long, default_value_t = 1000)]
    min_samples: usize,
    #[arg(long, default_value_t = 100_000)]
    max_samples: usize,
    /// Per-walk step cap as a multiple of the pair hop distance.
    #[arg(long, default_value_t = 10.0)]
    max_steps_factor: f64,
    /// Walk starts per successful sample before giving up.
    #[arg(long, default_value_t = 50_000)]
    max_attempts: usize,
    /// Sample traces kept for time queries.
    #[arg(long, default_value_t = 10_000)]
    retention: usize,
}

impl RwrArgs {
    fn to_config(&self) -> RwrConfig {
        RwrConfig {
            tau: if self.tau_mode == "temporal" {
                TauMode::Temporal
            } else {
                TauMode::Zero
            },
            tolerance: self.tolerance,
            stability_window: self.stability_window,
            batch: self.batch,
            min_samples: self.min_samples,
            max_samples: self.max_samples,
            max_steps_factor: self.max_steps_factor,
            max_attempts: self.max_attempts,
            seed: self.seed,
            retention: self.retention,
        }
    }
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Observation file (JSON Lines with exactly one record).
    #[arg(long)]
    obs: PathBuf,
    /// Output uncertain-trajectory JSON.
    #[arg(long)]
    out: PathBuf,
    /// Also write a GeoJSON FeatureCollection here.
    #[arg(long)]
    geojson: Option<PathBuf>,
    #[command(flatten)]
    rwr: RwrArgs,
}

#[derive(Args)]
struct QueryArgs {
    /// Uncertain-trajectory JSON produced by `infer`.
    #[arg(long)]
    input: PathBuf,
    /// Network file; only needed for time-at fallback on absent nodes.
    #[arg(long, global = true)]
    network: Option<PathBuf>,
    #[command(subcommand)]
    what: QueryKind,
}

#[derive(Subcommand)]
enum QueryKind {
    /// Maximum-likelihood trajectory.
    Mlt,
    /// Highest-weight edges.
    TopEdges {
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Location distribution at a time of day (seconds or HH:MM:SS).
    LocAt {
        #[arg(long)]
        t: String,
    },
    /// Arrival-time distribution at a node.
    TimeAt {
        #[arg(long)]
        node: u64,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    trajectories: PathBuf,
    /// Sampling intervals in seconds, comma separated.
    #[arg(long, default_value = "900", value_delimiter = ',')]
    si: Vec<u32>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Output prefix; writes <prefix>-si<N>.json and .csv per interval.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip SP/STP/MLT baselines.
    #[arg(long)]
    no_baselines: bool,
    /// Skip location/time query scoring.
    #[arg(long)]
    no_location: bool,
    #[arg(long, default_value_t = infertra::nmm::DEFAULT_ORDER)]
    order: usize,
    #[arg(long, default_value_t = infertra::nmm::DEFAULT_WINDOW_SECONDS)]
    delta: u32,
    #[arg(long, default_value_t = infertra::nmm::DEFAULT_EPSILON)]
    epsilon: f64,
    #[command(flatten)]
    rwr: RwrArgs,
}

#[derive(Args)]
struct FixturesArgs {
    /// Fixture directory.
    #[arg(long, default_value = "fixtures")]
    dir: PathBuf,
    /// Verify instead of rewriting; nonzero exit on drift.
    #[arg(long)]
    check: bool,
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<infertra::Error> for Failure {
    fn from(e: infertra::Error) -> Self {
        let code = match &e {
            infertra::Error::UnreachablePair { .. } | infertra::Error::AttemptsExhausted { .. } => {
                3
            }
            _ => 1,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 1,
            msg: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure {
            code: 1,
            msg: format!("json: {e}"),
        }
    }
}

fn fail(msg: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        msg: msg.into(),
    }
}

fn log_enabled() -> bool {
    matches!(
        std::env::var("INFERTRA_LOG").as_deref(),
        Ok("info") | Ok("debug") | Ok("trace")
    )
}

macro_rules! progress {
    ($($arg:tt)*) => {
        if log_enabled() {
            eprintln!($($arg)*);
        }
    };
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.show_config {
        println!(
            "{}",
            serde_json::to_string_pretty(&default_config()).unwrap()
        );
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required (try --help)");
        return ExitCode::from(2);
    };
    let threads = cli.threads;
    let outcome = infertra::with_threads(threads, || run(command));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn default_config() -> serde_json::Value {
    let learn = LearnParams::default();
    let rwr = RwrConfig::default();
    serde_json::json!({
        "learn": {
            "order": learn.order,
            "delta_s": learn.window,
            "epsilon": learn.epsilon,
            "stride_s": learn.stride,
            "forced_bins": learn.forced_bins,
            "speed_fallback_mps": learn.speed_fallback,
            "max_time_bins": infertra::nmm::MAX_TIME_BINS,
        },
        "rwr": {
            "tau_mode": "zero",
            "tolerance": rwr.tolerance,
            "stability_window": rwr.stability_window,
            "batch": rwr.batch,
            "min_samples": rwr.min_samples,
            "max_samples": rwr.max_samples,
            "max_steps_factor": rwr.max_steps_factor,
            "max_attempts": rwr.max_attempts,
            "retention": rwr.retention,
            "seed": rwr.seed,
        },
        "eval": {
            "folds": 10,
            "sampling_interval_s": 900,
            "baselines": true,
            "location_queries": true,
        },
    })
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Gen(a) => cmd_gen(a),
        Command::Learn(a) => cmd_learn(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Query(a) => cmd_query(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Fixtures(a) => cmd_fixtures(a),
    }
}

fn load_network(path: &Path) -> Result<RoadNetwork, Failure> {
    if path.is_dir() {
        let nodes = File::open(path.join("nodes.csv"))?;
        let edges = File::open(path.join("edges.csv"))?;
        Ok(RoadNetwork::load_csv(
            BufReader::new(nodes),
            BufReader::new(edges),
        )?)
    } else if path.extension().is_some_and(|e| e == "json") {
        Ok(RoadNetwork::load_json(BufReader::new(File::open(path)?))?)
    } else {
        Err(fail(format!(
            "--network must be a .json file or a directory with nodes.csv/edges.csv, got {}",
            path.display()
        )))
    }
}

fn cmd_gen(a: GenArgs) -> Result<(), Failure> {
    std::fs::create_dir_all(&a.out)?;
    let pm: PlantedModel = match a.pattern.as_str() {
        "bimodal" => bimodal_fork_model(a.seed)?.0,
        _ => {
            let net = grid_network(a.rows, a.cols, a.spacing)?;
            PlantedModel::uniform(net, a.min_hops, a.max_hops, a.seed)
        }
    };
    progress!(
        "generating {} trips on {} nodes",
        a.trips,
        pm.net.node_count()
    );
    let db = simulate_corpus(&pm, a.trips)?;
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    pm.net.write_csv(&mut nodes, &mut edges)?;
    std::fs::write(a.out.join("nodes.csv"), nodes)?;
    std::fs::write(a.out.join("edges.csv"), edges)?;
    let mut w = BufWriter::new(File::create(a.out.join("trajectories.jsonl"))?);
    write_trajectories(&pm.net, &db, &mut w)?;
    w.flush()?;
    println!(
        "wrote {} nodes, {} edges, {} trajectories to {}",
        pm.net.node_count(),
        pm.net.edge_count(),
        db.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_learn(a: LearnArgs) -> Result<(), Failure> {
    let net = load_network(&a.network)?;
    let db = read_trajectories(&net, BufReader::new(File::open(&a.trajectories)?))?;
    let params = LearnParams {
        order: a.order,
        window: a.delta,
        epsilon: a.epsilon,
        stride: a.stride,
        forced_bins: a.bins,
        speed_fallback: a.speed_fallback,
    };
    progress!(
        "learning order-{} model from {} trajectories",
        params.order,
        db.len()
    );
    let model = learn(&net, &db, &params)?;
    let mut blob = Vec::new();
    model.save(&mut blob)?;
    std::fs::write(&a.model, &blob)?;
    println!(
        "model: {} affinity keys, {} time bins, {} bytes -> {}",
        model.affinity_key_count(),
        model.total_bin_count(),
        blob.len(),
        a.model.display()
    );
    Ok(())
}

fn load_model(path: &Path, net: &RoadNetwork) -> Result<NetworkMobilityModel, Failure> {
    Ok(NetworkMobilityModel::load(
        BufReader::new(File::open(path)?),
        Some(net),
    )?)
}

fn cmd_infer(a: InferArgs) -> Result<(), Failure> {
    let net = load_network(&a.network)?;
    let model = load_model(&a.model, &net)?;
    let observations = read_observations(&net, BufReader::new(File::open(&a.obs)?))?;
    if observations.len() != 1 {
        return Err(fail(format!(
            "expected exactly one observation record in {}, found {}",
            a.obs.display(),
            observations.len()
        )));
    }
    let cfg = a.rwr.to_config();
    progress!(
        "sampling walks for {} observation points",
        observations[0].points.len()
    );
    let (u, stats) = infertra::inference::infer_with_stats(&net, &model, &observations[0], &cfg)?;
    std::fs::write(&a.out, u.to_json_bytes())?;
    if let Some(geo) = &a.geojson {
        let mut bytes = serde_json::to_vec_pretty(&u.to_geojson_value())?;
        bytes.push(b'\n');
        std::fs::write(geo, bytes)?;
    }
    println!(
        "{} edges, {} nodes from {} samples ({}) -> {}",
        u.edge_count(),
        u.node_count(),
        stats.accepted_samples,
        if stats.converged {
            "converged"
        } else {
            "sample cap reached"
        },
        a.out.display()
    );
    Ok(())
}

fn cmd_query(a: QueryArgs) -> Result<(), Failure> {
    let u = UncertainTrajectory::from_json(BufReader::new(File::open(&a.input)?))?;
    let out = match a.what {
        QueryKind::Mlt => {
            let (path, p) = u.most_likely_trajectory()?;
            serde_json::json!({"query": "mlt", "path": path, "likelihood": p})
        }
        QueryKind::TopEdges { k } => {
            if k == 0 {
                return Err(fail("--k must be >= 1"));
            }
            let edges: Vec<serde_json::Value> = u
                .top_k_edges(k)
                .into_iter()
                .map(|(e, w)| {
                    serde_json::json!({"id": e.id, "src": e.src, "dst": e.dst, "weight": w})
                })
                .collect();
            serde_json::json!({"query": "top-edges", "k": k, "edges": edges})
        }
        QueryKind::LocAt { t } => {
            let at = TimeOfDay::parse(&t)?;
            let dist: Vec<serde_json::Value> = u
                .location_at_time(at)?
                .into_iter()
                .map(|(n, p)| serde_json::json!({"node": n, "p": p}))
                .collect();
            serde_json::json!({"query": "loc-at", "t": at.seconds(), "distribution": dist})
        }
        QueryKind::TimeAt { node } => {
            let net = match &a.network {
                Some(p) => Some(load_network(p)?),
                None => None,
            };
            let d = u.time_at_node(node, net.as_ref())?;
            serde_json::json!({
                "query": "time-at",
                "node": d.node,
                "fallback": d.fallback,
                "mean_t": d.mean,
                "samples": d.samples.len(),
            })
        }
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let net = load_network(&a.network)?;
    let db = read_trajectories(&net, BufReader::new(File::open(&a.trajectories)?))?;
    let cfg = EvalConfig {
        learn: LearnParams {
            order: a.order,
            window: a.delta,
            epsilon: a.epsilon,
            ..LearnParams::default()
        },
        rwr: a.rwr.to_config(),
        seed: a.rwr.seed,
        baselines: !a.no_baselines,
        location_queries: !a.no_location,
    };
    for &si in &a.si {
        progress!("evaluating si={si}");
        let report = kfold_eval(&net, &db, a.folds, si, &cfg)?;
        let s = &report.summary;
        println!(
            "si={si}: F={:.4} (P={:.4} R={:.4}) mlt_F={:.4} sp_F={:.4} stp_F={:.4} \
             over {} trajectories, {} failures",
            s.mean_f_score,
            s.mean_precision,
            s.mean_recall,
            s.mlt_mean_f_score,
            s.sp_mean_f_score,
            s.stp_mean_f_score,
            s.trajectories,
            s.failures,
        );
        if let Some(prefix) = &a.out {
            let base = prefix.display();
            std::fs::write(format!("{base}-si{si}.json"), report.to_json_bytes())?;
            let mut csv = Vec::new();
            report.write_csv(&mut csv)?;
            std::fs::write(format!("{base}-si{si}.csv"), csv)?;
        }
    }
    Ok(())
}

fn cmd_fixtures(a: FixturesArgs) -> Result<(), Failure> {
    if a.check {
        let drifted = infertra::fixtures::check_fixture_dir(&a.dir)?;
        if drifted.is_empty() {
            println!("fixtures up to date in {}", a.dir.display());
            Ok(())
        } else {
            Err(fail(format!(
                "fixture goldens drifted: {}",
                drifted.join(", ")
            )))
        }
    } else {
        infertra::fixtures::write_fixture_dir(&a.dir)?;
        println!("fixtures written to {}", a.dir.display());
        Ok(())
    }
}
