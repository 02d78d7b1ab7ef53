//! Experiment configuration and orchestration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::{load_idx, synth_clusters, Dataset, Split, SynthConfig};
use super::export::write_metrics_csv;
use super::preprocess::{preprocess, PreprocessConfig, PreprocessReport};
use crate::error::{Error, Result};
use crate::learning::{train, Algorithm, EpochMetrics, LabeledSet, TrainConfig};
use crate::network::io::write_weights;
use crate::network::{init_weights, init_weights_fan_in, NetworkSpec, Weights, DEFAULT_MEMORY_BUDGET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Idx,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: SourceKind,
    /// IDX image file, gzip-compressed or raw.
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Split sizes, taken in order from the start of the data; validation
    /// directly follows the training block.
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Used when `source = "synthetic"`.
    pub synth: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: SourceKind::Idx,
            images: PathBuf::from("data/mnist-subset/images-idx3-ubyte.gz"),
            labels: PathBuf::from("data/mnist-subset/labels-idx1-ubyte.gz"),
            train: 7000,
            val: 1000,
            test: 2000,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// Every weight from `N(0, scale^2)`.
    Gaussian,
    /// `N(0, scale^2 / fan_in)` per matrix.
    FanIn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Hidden widths `n_1..n_L`; `n_0` comes from the data.
    pub hidden: Vec<usize>,
    /// Hidden widths for ridge regression, which needs a single layer.
    /// Defaults to the first entry of `hidden`.
    pub ridge_hidden: Option<usize>,
    /// `n*_l` for rotation-compression; defaults to `hidden`.
    pub rotation_widths: Option<Vec<usize>>,
    pub init: InitKind,
    pub init_scale: f64,
    /// Cap on the scalars of the largest intermediate representation.
    pub memory_budget: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            ridge_hidden: None,
            rotation_widths: None,
            init: InitKind::FanIn,
            init_scale: 1.0,
            memory_budget: DEFAULT_MEMORY_BUDGET as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub algorithms: Vec<Algorithm>,
    /// Each seed drives weight initialization and batch shuffling.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Write final weights next to the metrics.
    pub save_weights: bool,
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            algorithms: vec![Algorithm::SsBp, Algorithm::Lrc],
            seeds: vec![0],
            out_dir: PathBuf::from("runs"),
            save_weights: false,
            data: DataConfig::default(),
            preprocess: PreprocessConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("need at least one algorithm and one seed".into()));
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be non-empty and positive".into()));
        }
        if !(self.network.init_scale > 0.0) {
            return Err(Error::Config("init_scale must be positive".into()));
        }
        if self.train.epochs == 0 {
            return Err(Error::Config("experiments need at least one epoch".into()));
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Network specification that `alg` trains on inputs of dimension `n0`.
    pub fn spec_for(&self, alg: Algorithm, n0: usize, classes: usize) -> Result<NetworkSpec> {
        let net = &self.network;
        let hidden = if alg == Algorithm::Rr {
            vec![net.ridge_hidden.unwrap_or(net.hidden[0])]
        } else {
            net.hidden.clone()
        };
        let widths: Vec<usize> = std::iter::once(n0).chain(hidden).collect();
        let mut spec = NetworkSpec::new(widths, alg.mode(), classes)?.with_memory_budget(u128::from(net.memory_budget))?;
        if let (Some(rot), Algorithm::Lrc | Algorithm::IbpLrc) = (&net.rotation_widths, alg) {
            spec = spec.with_rotation_widths(rot.clone())?;
        }
        Ok(spec)
    }

    pub fn init_for(&self, spec: &NetworkSpec, seed: u64) -> Result<Weights> {
        match self.network.init {
            InitKind::Gaussian => init_weights(spec, self.network.init_scale, seed),
            InitKind::FanIn => init_weights_fan_in(spec, self.network.init_scale, seed),
        }
    }
}

/// Loads, splits and preprocesses the configured data.
pub fn prepare_data(cfg: &DataConfig, pre: &PreprocessConfig) -> Result<(Dataset, PreprocessReport)> {
    let raw = match cfg.source {
        SourceKind::Idx => load_idx(&cfg.images, &cfg.labels),
        SourceKind::Synthetic => synth_clusters(&cfg.synth),
    }
    .map_err(|e| e.in_stage("load data"))?;
    let ds = raw
        .carve_splits(cfg.train, cfg.val, cfg.test)
        .map_err(|e| e.in_stage("split data"))?;
    preprocess(ds, pre).map_err(|e| e.in_stage("preprocess"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub one_pass_val_error: Option<f64>,
    pub one_pass_test_error: Option<f64>,
    /// Epoch with the lowest validation error (training error without a
    /// validation split), earliest on ties.
    pub best_epoch: usize,
    pub asymptotic_val_error: Option<f64>,
    pub asymptotic_test_error: Option<f64>,
    pub wall_time_s: f64,
    pub metrics_file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub runs: usize,
    pub median_one_pass_test_error: Option<f64>,
    pub median_asymptotic_test_error: Option<f64>,
    pub median_wall_time_s: f64,
    /// Median wall time over the SS baseline's median in the same run group.
    pub time_ratio_vs_ss: Option<f64>,
}

/// SS against TS-LRC one-pass test error for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub seed: u64,
    pub ss_one_pass_test_error: f64,
    pub lrc_one_pass_test_error: f64,
    /// `ss - lrc`; positive when TS-LRC is ahead.
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub data_note: String,
    pub input_dim: usize,
    pub pca_dim: Option<usize>,
    pub retained_variance: Option<f64>,
    pub runs: Vec<RunSummary>,
    pub summaries: Vec<AlgorithmSummary>,
    pub paired: Vec<PairedRow>,
}

fn error_at(metrics: &[EpochMetrics], epoch: usize, split: &str) -> Option<f64> {
    metrics
        .iter()
        .find(|m| m.epoch == epoch && m.split == split)
        .map(|m| m.error_rate)
}

/// One-pass and best-epoch errors from a run's metrics rows.
pub fn summarize_run(alg: Algorithm, seed: u64, metrics: &[EpochMetrics], metrics_file: PathBuf) -> RunSummary {
    let last = metrics.iter().map(|m| m.epoch).max().unwrap_or(0);
    let select = if metrics.iter().any(|m| m.split == "val") {
        "val"
    } else {
        "train"
    };
    let best_epoch = (1..=last)
        .filter_map(|e| error_at(metrics, e, select).map(|err| (e, err)))
        .fold(None, |best: Option<(usize, f64)>, (e, err)| match best {
            Some((_, b)) if b <= err => best,
            _ => Some((e, err)),
        })
        .map_or(last, |(e, _)| e);
    let wall_time_s = metrics.iter().map(|m| m.wall_time_s).fold(0.0, f64::max);
    RunSummary {
        algorithm: alg,
        seed,
        one_pass_val_error: error_at(metrics, 1, "val"),
        one_pass_test_error: error_at(metrics, 1, "test"),
        best_epoch,
        asymptotic_val_error: error_at(metrics, best_epoch, "val"),
        asymptotic_test_error: error_at(metrics, best_epoch, "test"),
        wall_time_s,
        metrics_file,
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

pub fn summarize(runs: &[RunSummary]) -> (Vec<AlgorithmSummary>, Vec<PairedRow>) {
    let mut algs: Vec<Algorithm> = Vec::new();
    for r in runs {
        if !algs.contains(&r.algorithm) {
            algs.push(r.algorithm);
        }
    }
    let of = |a: Algorithm| runs.iter().filter(move |r| r.algorithm == a);
    let ss_time = median(of(Algorithm::SsBp).map(|r| r.wall_time_s).collect());
    let summaries = algs
        .iter()
        .map(|&a| {
            let t = median(of(a).map(|r| r.wall_time_s).collect()).unwrap_or(0.0);
            AlgorithmSummary {
                algorithm: a,
                runs: of(a).count(),
                median_one_pass_test_error: median(of(a).filter_map(|r| r.one_pass_test_error).collect()),
                median_asymptotic_test_error: median(of(a).filter_map(|r| r.asymptotic_test_error).collect()),
                median_wall_time_s: t,
                time_ratio_vs_ss: ss_time.filter(|&s| s > 0.0).map(|s| t / s),
            }
        })
        .collect();
    let paired = of(Algorithm::SsBp)
        .filter_map(|ss| {
            let lrc = of(Algorithm::Lrc).find(|r| r.seed == ss.seed)?;
            let (s, l) = (ss.one_pass_test_error?, lrc.one_pass_test_error?);
            Some(PairedRow {
                seed: ss.seed,
                ss_one_pass_test_error: s,
                lrc_one_pass_test_error: l,
                difference: s - l,
            })
        })
        .collect();
    (summaries, paired)
}

pub fn metrics_file_name(alg: Algorithm, seed: u64) -> String {
    format!("metrics-{alg}-seed{seed}.csv")
}

/// Trains every (algorithm, seed) pair in order and writes one metrics CSV
/// per run, `summary.json` and `paired.csv` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (ds, prep) = prepare_data(&cfg.data, &cfg.preprocess)?;
    let train_set = ds.subset(Split::Train);
    let named: Vec<(&str, LabeledSet)> = [Split::Val, Split::Test]
        .into_iter()
        .map(|s| (s.name(), ds.subset(s)))
        .filter(|(_, set)| !set.is_empty())
        .collect();
    let eval: Vec<(&str, &LabeledSet)> = named.iter().map(|(n, s)| (*n, s)).collect();
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut runs = Vec::new();
    for &alg in &cfg.algorithms {
        for &seed in &cfg.seeds {
            let stage = format!("{alg} seed {seed}");
            let spec = cfg
                .spec_for(alg, ds.input_dim(), ds.classes)
                .map_err(|e| e.in_stage(format!("build {stage}")))?;
            let w0 = cfg.init_for(&spec, seed).map_err(|e| e.in_stage(format!("init {stage}")))?;
            let tcfg = TrainConfig { seed, ..cfg.train };
            let outcome = train(w0, &train_set, &eval, &tcfg, alg).map_err(|e| e.in_stage(format!("train {stage}")))?;
            let file = out.join(metrics_file_name(alg, seed));
            write_metrics_csv(&file, &format!("algorithm={alg} seed={seed}"), &outcome.metrics)
                .map_err(|e| e.in_stage(format!("write {stage}")))?;
            if cfg.save_weights {
                write_weights(&outcome.weights, out.join(format!("weights-{alg}-seed{seed}.tsnw")))
                    .map_err(|e| e.in_stage(format!("write {stage}")))?;
            }
            runs.push(summarize_run(alg, seed, &outcome.metrics, file));
        }
    }
    let (summaries, paired) = summarize(&runs);
    let report = ExperimentReport {
        name: cfg.name.clone(),
        data_note: ds.note.clone(),
        input_dim: prep.input_dim,
        pca_dim: prep.pca_dim,
        retained_variance: prep.retained_variance,
        runs,
        summaries,
        paired,
    };
    write_report(&report, out).map_err(|e| e.in_stage("write report"))?;
    Ok(report)
}

fn write_report(report: &ExperimentReport, out: &Path) -> Result<()> {
    let path = out.join("summary.json");
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    let path = out.join("paired.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Format {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    for row in &report.paired {
        w.serialize(row).map_err(|e| Error::Format {
            path: path.clone(),
            reason: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize, split: &str, err: f64) -> EpochMetrics {
        EpochMetrics {
            epoch,
            split: split.into(),
            loss: err,
            error_rate: err,
            wall_time_s: epoch as f64,
        }
    }

    #[test]
    fn best_epoch_uses_validation_and_breaks_ties_early() {
        let m = vec![
            row(0, "val", 0.9),
            row(0, "test", 0.9),
            row(1, "val", 0.5),
            row(1, "test", 0.4),
            row(2, "val", 0.3),
            row(2, "test", 0.35),
            row(3, "val", 0.3),
            row(3, "test", 0.2),
        ];
        let s = summarize_run(Algorithm::Lrc, 1, &m, PathBuf::new());
        assert_eq!(s.best_epoch, 2);
        assert_eq!(s.one_pass_test_error, Some(0.4));
        assert_eq!(s.asymptotic_test_error, Some(0.35));
        assert_eq!(s.wall_time_s, 3.0);
    }

    #[test]
    fn single_epoch_one_pass_equals_asymptotic() {
        let m = vec![row(0, "val", 0.9), row(0, "test", 0.8), row(1, "val", 0.5), row(1, "test", 0.4)];
        let s = summarize_run(Algorithm::SsBp, 0, &m, PathBuf::new());
        assert_eq!(s.one_pass_test_error, s.asymptotic_test_error);
        assert_eq!(s.one_pass_val_error, s.asymptotic_val_error);
    }

    #[test]
    fn medians_and_pairs() {
        let mk = |alg, seed, err, t| RunSummary {
            algorithm: alg,
            seed,
            one_pass_val_error: None,
            one_pass_test_error: Some(err),
            best_epoch: 1,
            asymptotic_val_error: None,
            asymptotic_test_error: Some(err),
            wall_time_s: t,
            metrics_file: PathBuf::new(),
        };
        let runs = vec![
            mk(Algorithm::SsBp, 0, 0.3, 1.0),
            mk(Algorithm::SsBp, 1, 0.5, 3.0),
            mk(Algorithm::Lrc, 0, 0.1, 4.0),
            mk(Algorithm::Lrc, 1, 0.2, 8.0),
        ];
        let (sums, paired) = summarize(&runs);
        assert_eq!(sums[0].median_one_pass_test_error, Some(0.4));
        assert_eq!(sums[1].time_ratio_vs_ss, Some(3.0));
        assert_eq!(paired.len(), 2);
        assert!((paired[1].difference - 0.3).abs() < 1e-15);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        let partial = ExperimentConfig::from_toml_str("seeds = [3]\n[train]\nepochs = 2\n").unwrap();
        assert_eq!(partial.seeds, vec![3]);
        assert_eq!(partial.train.epochs, 2);
        assert_eq!(partial.train.batch_size, 128);
    }
}
