use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tsnet::harness::experiment::{prepare_data, ExperimentConfig};
use tsnet::harness::export::{export_filters, export_gram};
use tsnet::harness::Split;
use tsnet::kernels::{self, KernelKind};
use tsnet::learning::Algorithm;
use tsnet::network::io::read_weights;

#[derive(Parser)]
#[command(name = "tsnet", version, about = "Tensor switching networks: kernels, training and exports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured (algorithm, seed) pair and write metrics.
    Train(TrainArgs),
    /// Print the SS and TS equivalent kernels of two inputs, depth by depth.
    Kernel(KernelArgs),
    /// Write a precomputed-kernel Gram file for a dataset split.
    Gram(GramArgs),
    /// Compare the closed-form single-layer TS kernel with a Monte Carlo estimate.
    Oracle(OracleArgs),
    /// Draw the first-layer filters of a saved model as a PGM image.
    ExportFilters(FilterArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display())),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    /// Run this algorithm only: rr, ibp, lrc, ibp-lrc or ss.
    #[arg(long)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KernelArgs {
    /// Comma-separated coordinates of the first input.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    y: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    depth: usize,
}

#[derive(Args)]
struct GramArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "train")]
    split: String,
    /// Use only the first N points of the split.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 1)]
    depth: usize,
    /// ss or ts.
    #[arg(long, default_value = "ts")]
    kind: KernelKind,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    y: Vec<f64>,
    /// Number of random hidden units.
    #[arg(long, default_value_t = 1_000_000)]
    n1: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FilterArgs {
    /// Weight file written by `train` with `save_weights = true`.
    #[arg(long)]
    weights: PathBuf,
    /// Image shape as ROWSxCOLS, e.g. 28x28. Taken from --config when omitted.
    #[arg(long)]
    shape: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 1)]
    layer: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(a) => train(a),
        Command::Kernel(a) => kernel(a),
        Command::Gram(a) => gram(a),
        Command::Oracle(a) => oracle(a),
        Command::ExportFilters(a) => filters(a),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(seed) = a.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(alg) = a.algorithm {
        cfg.algorithms = vec![alg];
    }
    if let Some(epochs) = a.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(out) = a.out {
        cfg.out_dir = out;
    }
    cfg.validate()?;
    let report = tsnet::harness::run_experiment(&cfg)?;
    if let (Some(k), Some(v)) = (report.pca_dim, report.retained_variance) {
        println!("PCA to {k} dims keeps {:.2}% of the training variance", 100.0 * v);
    }
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |e| format!("{:.2}", 100.0 * e));
    println!("{:<8} {:>6} {:>14} {:>14} {:>10}", "alg", "seed", "one-pass err%", "best err%", "time s");
    for r in &report.runs {
        println!(
            "{:<8} {:>6} {:>14} {:>14} {:>10.2}",
            r.algorithm.to_string(),
            r.seed,
            pct(r.one_pass_test_error),
            pct(r.asymptotic_test_error),
            r.wall_time_s
        );
    }
    for s in &report.summaries {
        let ratio = s.time_ratio_vs_ss.map_or("-".to_string(), |t| format!("{t:.2}x"));
        println!(
            "median {:<8} one-pass {:>6}%  best {:>6}%  time {ratio}",
            s.algorithm.to_string(),
            pct(s.median_one_pass_test_error),
            pct(s.median_asymptotic_test_error)
        );
    }
    println!("wrote {}", cfg.out_dir.join("summary.json").display());
    Ok(())
}

fn kernel(a: KernelArgs) -> Result<()> {
    let states = kernels::kernel_trajectory(&a.x, &a.y, a.depth)?;
    println!("depth,theta_ss,k_ss,k_ts,k_ts_normalized");
    for s in states {
        println!(
            "{},{},{},{},{}",
            s.depth,
            s.theta_ss,
            s.k_ss_xy,
            s.k_ts_xy,
            s.normalized_ts()
        );
    }
    Ok(())
}

fn gram(a: GramArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let split = match a.split.as_str() {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => bail!("unknown split {other:?} (train, val, test)"),
    };
    let (ds, _) = prepare_data(&cfg.data, &cfg.preprocess)?;
    let mut set = ds.subset(split);
    if let Some(n) = a.limit {
        set.inputs.truncate(n);
        set.labels.truncate(n);
    }
    if set.is_empty() {
        bail!("split {} is empty", a.split);
    }
    export_gram(&set.inputs, &set.labels, a.depth, a.kind, &a.out)?;
    println!("wrote {}x{} Gram matrix to {}", set.len(), set.len(), a.out.display());
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<()> {
    let state = kernels::deep_kernel_pair(&a.x, &a.y, 1)?;
    let xty: f64 = a.x.iter().zip(&a.y).map(|(u, v)| u * v).sum();
    let theta = kernels::generalized_angle(xty, state.k_ss_xx, state.k_ss_yy)?;
    let closed = state.k_ts_xy;
    let mc = kernels::mc_kernel_oracle(&a.x, &a.y, a.n1, a.sigma, a.seed)?;
    let se = kernels::mc_standard_error(theta, xty, a.n1);
    println!("theta        {theta}");
    println!("closed form  {closed}");
    println!("monte carlo  {mc}");
    println!("std error    {se}");
    let z = if se > 0.0 { (mc - closed).abs() / se } else { 0.0 };
    println!("deviation    {z:.3} standard errors");
    Ok(())
}

fn parse_shape(s: &str) -> Result<(usize, usize)> {
    let (r, c) = s.split_once('x').context("shape must look like ROWSxCOLS")?;
    Ok((r.trim().parse()?, c.trim().parse()?))
}

fn filters(a: FilterArgs) -> Result<()> {
    let w = read_weights(&a.weights)?;
    let shape = match (&a.shape, &a.config.config) {
        (Some(s), _) => Some(parse_shape(s)?),
        (None, Some(_)) => {
            let cfg = a.config.load()?;
            prepare_data(&cfg.data, &cfg.preprocess)?.0.image_shape
        }
        (None, None) => bail!("pass --shape ROWSxCOLS or the --config the model was trained with"),
    };
    export_filters(&w, a.layer, shape, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}
