//! `ckdyn`: verification suites and experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use ckdyn::arch::{Architecture, WeightRatio};
use ckdyn::autodiff::Activation;
use ckdyn::data;
use ckdyn::experiments::{self, MnistConfig, ToyConfig};
use ckdyn::report;
use ckdyn::verify::{self, Mutation, VerifyConfig};
use ckdyn::Error;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "ckdyn", version, about = "Higher-order residual and dense networks as discrete dynamical systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check direct and state-space evaluation against each other
    Verify(VerifyArgs),
    /// Train single-node C^k networks on the 1-D blue/red/blue problem
    TrainToy(ToyArgs),
    /// Perturbation ratio of trained residual networks across depths
    DepthSweep(SweepArgs),
    /// Train every architecture under identical settings
    Compare(CompareArgs),
    /// Weight count of a C^k block against its first-order equivalent
    ParamCount(ParamArgs),
}

/// Integer list flag value.
#[derive(Debug, Clone, PartialEq, Eq)]
struct List(Vec<usize>);

/// Parses `3`, `1,2,4` or `2..20` / `2..20:2` (inclusive, optional step).
fn parse_list(s: &str) -> Result<List, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((lo, rest)) = part.split_once("..") {
            let (hi, step) = rest.split_once(':').unwrap_or((rest, "1"));
            let num = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
            let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
            if step == 0 || lo > hi {
                return Err(format!("empty range `{part}`"));
            }
            out.extend((lo..=hi).step_by(step));
        } else {
            out.push(part.parse::<usize>().map_err(|e| format!("`{part}`: {e}"))?);
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(List(out))
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    match s {
        "tanh" => Ok(Activation::Tanh),
        "sigmoid" => Ok(Activation::Sigmoid),
        "leaky_relu" | "leaky-relu" => Ok(Activation::LeakyRelu(0.1)),
        other => Err(format!("unknown activation `{other}` (tanh, sigmoid, leaky_relu)")),
    }
}

#[derive(Debug, Args)]
struct Common {
    /// Base seed; printed in every artifact header
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for artifacts
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Orders k to check
    #[arg(short = 'k', long = "order", visible_alias = "k", value_parser = parse_list, default_value = "1..4")]
    orders: List,
    /// Widths d
    #[arg(short = 'd', long = "width", visible_alias = "d", value_parser = parse_list, default_value = "1,2,8")]
    widths: List,
    /// Depths L
    #[arg(short = 'L', long = "depth", visible_alias = "L", value_parser = parse_list, default_value = "3,10")]
    depths: List,
    /// Mesh size
    #[arg(long, default_value_t = 1.0)]
    dl: f64,
    /// First seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of seeds per grid point
    #[arg(long, default_value_t = 50)]
    seeds: u64,
    /// Max abs deviation allowed between equivalent forms
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    /// Test hook: negate the dense forcing matrix
    #[arg(long, hide = true)]
    inject_dense_sign_flip: bool,
}

#[derive(Debug, Args)]
struct ToyArgs {
    /// Orders to train
    #[arg(short = 'k', long = "order", visible_alias = "k", value_parser = parse_list, default_value = "1,2")]
    orders: List,
    #[arg(short = 'L', long = "depth", visible_alias = "L", default_value_t = 16)]
    depth: usize,
    #[arg(long, default_value_t = ToyConfig::default().dl)]
    dl: f64,
    /// Training runs per order (seeds seed+1 ..= seed+runs)
    #[arg(long, default_value_t = 5)]
    runs: u64,
    /// Maximum epochs per run
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    /// Points per outer segment
    #[arg(long, default_value_t = ToyConfig::default().n_per_segment)]
    samples: usize,
    #[arg(long, default_value_t = ToyConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value = "tanh", value_parser = parse_activation)]
    activation: Activation,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct MnistArgs {
    /// Directory holding train-images-idx3-ubyte[.gz] and train-labels-idx1-ubyte[.gz]
    #[arg(long, env = "CK_DATA_DIR", default_value = "data/mnist-10k")]
    data_dir: PathBuf,
    /// Use only the first N samples
    #[arg(long)]
    samples: Option<usize>,
    #[arg(short = 'd', long = "width", visible_alias = "d", default_value_t = MnistConfig::default().width)]
    width: usize,
    #[arg(long, default_value_t = MnistConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = MnistConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = MnistConfig::default().batch_size)]
    batch_size: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Depths L (at least three distinct values)
    #[arg(short = 'L', long = "depth", visible_alias = "L", value_parser = parse_list, default_value = "2..20:2")]
    depths: List,
    #[arg(long, default_value_t = MnistConfig::depth_sweep().dl)]
    dl: f64,
    #[arg(long, default_value = "sigmoid", value_parser = parse_activation)]
    activation: Activation,
    #[command(flatten)]
    mnist: MnistArgs,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// C^k orders
    #[arg(short = 'k', long = "order", visible_alias = "k", value_parser = parse_list, default_value = "1..4")]
    orders: List,
    /// Additive dense orders
    #[arg(long, value_parser = parse_list, default_value = "2..4")]
    dense: List,
    #[arg(short = 'L', long = "depth", visible_alias = "L", default_value_t = experiments::COMPARE_DEPTH)]
    depth: usize,
    #[arg(long, default_value_t = MnistConfig::comparison().dl)]
    dl: f64,
    #[arg(long, default_value = "tanh", value_parser = parse_activation)]
    activation: Activation,
    #[command(flatten)]
    mnist: MnistArgs,
}

#[derive(Debug, Args)]
struct ParamArgs {
    #[arg(short = 'k', long = "order", visible_alias = "k")]
    order: usize,
    #[arg(short = 'd', long = "width", visible_alias = "d")]
    width: usize,
    /// Layers counted
    #[arg(short = 'L', long = "depth", visible_alias = "L", default_value_t = 1)]
    depth: usize,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Check(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::Idx(_) | Error::Checkpoint(_) => Failure::Io(e.to_string()),
            other => Failure::Check(other.to_string()),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn emit(dir: &Path, files: &[(&str, String)]) -> Result<(), Failure> {
    for p in report::emit(dir, files)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run_verify(a: VerifyArgs) -> Result<(), Failure> {
    let cfg = VerifyConfig {
        orders: a.orders.0,
        widths: a.widths.0,
        depths: a.depths.0,
        seeds: (a.seed..a.seed + a.seeds).collect(),
        dl: a.dl,
        tolerance: a.tolerance,
        identity_tolerance: a.tolerance.min(VerifyConfig::default().identity_tolerance),
        mutation: a.inject_dense_sign_flip.then_some(Mutation::FlipDenseForcingSign),
        ..VerifyConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let start = Instant::now();
    let report = verify::run(&cfg)?;
    for c in &report.checks {
        println!("{c}");
    }
    println!("{} checks in {:.2?}", report.checks.len(), start.elapsed());
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<String> = report
            .failures()
            .map(|c| match c.worst {
                Some(case) => format!("{} ({case})", c.name),
                None => c.name.clone(),
            })
            .collect();
        Err(Failure::Check(format!("failed: {}", names.join(", "))))
    }
}

fn run_toy(a: ToyArgs) -> Result<(), Failure> {
    if a.orders.0.contains(&0) {
        return Err(usage("orders must be >= 1"));
    }
    if a.runs == 0 || a.samples == 0 {
        return Err(usage("--runs and --samples must be >= 1"));
    }
    let cfg = ToyConfig {
        depth: a.depth,
        n_per_segment: a.samples,
        data_seed: a.common.seed,
        seeds: (a.common.seed + 1..=a.common.seed + a.runs).collect(),
        dl: a.dl,
        activation: a.activation,
        epochs: a.epochs,
        lr: a.lr,
        ..ToyConfig::default()
    };
    let toy = data::generate_toy_1d(cfg.n_per_segment, cfg.data_seed)?;
    println!(
        "best single threshold on raw inputs: {:.4}",
        data::best_threshold_accuracy(toy.inputs().data(), toy.labels())
    );
    let mut results = Vec::new();
    for &k in &a.orders.0 {
        let r = experiments::run_toy_experiment(k, &cfg, a.common.jobs)?;
        for run in &r.runs {
            println!("C{k} seed {:>3}: accuracy {:.4} ({} epochs)", run.seed, run.accuracy, run.epochs_run);
        }
        results.push(r);
    }
    let best = results.last().expect("non-empty orders");
    let title = format!("C{} phase space, depth {}", best.k, cfg.depth);
    emit(
        &a.common.out,
        &[
            (report::TOY_CSV, report::toy_csv(a.common.seed, &results)),
            (report::TRAJECTORY_CSV, report::trajectory_csv(a.common.seed, &best.best)),
            (report::TRAJECTORY_SVG, report::phase_space_plot(&title, &best.best)?),
        ],
    )
}

fn load_mnist(a: &MnistArgs) -> Result<data::Dataset, Failure> {
    let ds = data::load_mnist_dir(&a.data_dir)?;
    match a.samples {
        Some(n) => Ok(ds.take(n)?),
        None => Ok(ds),
    }
}

fn mnist_config(a: &MnistArgs, dl: f64, activation: Activation) -> MnistConfig {
    MnistConfig {
        width: a.width,
        dl,
        activation,
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.common.seed,
        ..MnistConfig::default()
    }
}

fn run_sweep(a: SweepArgs) -> Result<(), Failure> {
    let mut distinct = a.depths.0.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(usage(format!("depth sweep needs at least 3 distinct depths, got {distinct:?}")));
    }
    let ds = load_mnist(&a.mnist)?;
    let cfg = mnist_config(&a.mnist, a.dl, a.activation);
    let sweep = experiments::run_depth_sweep(&a.depths.0, &ds, &cfg, a.mnist.common.jobs)?;
    println!("{:>4} {:>10} {:>10} {:>8}", "L", "mean_rho", "1/rho", "val_acc");
    for p in &sweep.points {
        println!("{:>4} {:>10.5} {:>10.4} {:>8.4}", p.depth, p.mean_rho, p.inv_rho(), p.val_acc);
    }
    println!(
        "fit 1/rho = {:.4} L + {:.4}; r^2 {:.4}; d {}; spearman {:.4}",
        sweep.fit.slope,
        sweep.fit.intercept,
        sweep.fit.r_squared,
        sweep.fit.d_estimate.map_or("n/a".into(), |d| format!("{d:.3}")),
        sweep.spearman
    );
    emit(
        &a.mnist.common.out,
        &[
            (report::DEPTH_SWEEP_CSV, report::depth_sweep_csv(a.mnist.common.seed, &sweep)),
            (report::DEPTH_SWEEP_SVG, report::depth_sweep_svg(&sweep)?),
        ],
    )
}

fn run_compare(a: CompareArgs) -> Result<(), Failure> {
    if a.orders.0.contains(&0) || a.dense.0.contains(&0) {
        return Err(usage("orders must be >= 1"));
    }
    let archs: Vec<Architecture> = a
        .orders
        .0
        .iter()
        .map(|&k| Architecture::Smooth(k))
        .chain(a.dense.0.iter().map(|&k| Architecture::Dense(k)))
        .collect();
    let ds = load_mnist(&a.mnist)?;
    let cfg = mnist_config(&a.mnist, a.dl, a.activation);
    let rows = experiments::compare_orders(&archs, a.depth, &ds, &cfg, a.mnist.common.jobs)?;
    println!("{:<12} {:>3} {:>10}", "arch", "k", "test_error");
    for r in &rows {
        println!("{:<12} {:>3} {:>10.4}", r.architecture.to_string(), r.architecture.order(), r.test_error());
    }
    emit(&a.mnist.common.out, &[(report::COMPARE_CSV, report::compare_csv(a.mnist.common.seed, &rows))])
}

fn run_param_count(a: ParamArgs) -> Result<(), Failure> {
    if a.order == 0 || a.width == 0 || a.depth == 0 {
        return Err(usage("order, width and depth must be >= 1"));
    }
    println!("{}", WeightRatio::for_depth(a.order, a.width, a.depth));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify(a) => run_verify(a),
        Command::TrainToy(a) => run_toy(a),
        Command::DepthSweep(a) => run_sweep(a),
        Command::Compare(a) => run_compare(a),
        Command::ParamCount(a) => run_param_count(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CHECK_FAILED)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_IO)
        }
    }
}
