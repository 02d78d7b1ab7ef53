mod common;

use std::fs;
use std::path::{Path, PathBuf};

use tsnet::harness::data::parse_idx_labels;
use tsnet::harness::experiment::{metrics_file_name, ExperimentConfig};
use tsnet::harness::export::{export_filters, export_gram, parse_gram, read_metrics_csv, write_metrics_csv};
use tsnet::harness::preprocess::Pca;
use tsnet::harness::{load_idx, run_experiment, synth_clusters, Split, SynthConfig};
use tsnet::kernels::KernelKind;
use tsnet::learning::{Algorithm, EpochMetrics};
use tsnet::network::init_weights;
use tsnet::network::io::{read_weights, write_weights};
use tsnet::{DenseTensor, Mode, NetworkSpec};

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-subset")
}

#[test]
fn toy_gram_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let points = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
    let labels = [0, 1, 0];
    let path = dir.path().join("toy.gram");
    let g = export_gram(&points, &labels, 1, KernelKind::Ts, &path).unwrap();
    let written = fs::read(&path).unwrap();
    assert_eq!(written, fs::read(golden("toy-ts-depth1.gram")).unwrap());

    let text = String::from_utf8(written.clone()).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.split(' ').count() == 5));
    let (parsed_labels, parsed) = parse_gram(&text).unwrap();
    assert_eq!(parsed_labels, labels);
    assert_eq!(parsed, g);

    export_gram(&points, &labels, 1, KernelKind::Ts, &path).unwrap();
    assert_eq!(fs::read(&path).unwrap(), written);
}

#[test]
fn gram_of_random_points_round_trips_exactly() {
    let mut r = common::rng(50);
    let points: Vec<Vec<f64>> = (0..12).map(|_| common::gaussian_vec(&mut r, 5)).collect();
    let labels: Vec<usize> = (0..12).map(|p| p % 3).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.gram");
    for kind in [KernelKind::Ss, KernelKind::Ts] {
        let g = export_gram(&points, &labels, 3, kind, &path).unwrap();
        let (_, parsed) = parse_gram(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(parsed, g);
    }
}

#[test]
fn filter_grid_matches_golden_file() {
    let spec = NetworkSpec::new(vec![1024, 16], Mode::Ss, 2).unwrap();
    let mut w = init_weights(&spec, 1.0, 0).unwrap();
    let data: Vec<f64> = (0..16)
        .flat_map(|f| {
            (0..1024).map(move |p| if f == 5 { 0.25 } else { ((p * (f + 1)) % 17) as f64 - 8.0 })
        })
        .collect();
    w.activation[0] = DenseTensor::matrix(16, 1024, data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("filters.pgm");
    export_filters(&w, 1, Some((32, 32)), &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(bytes, fs::read(golden("filters-16x32x32.pgm")).unwrap());
    assert!(bytes.starts_with(b"P5\n134 134\n255\n"));
    export_filters(&w, 1, Some((32, 32)), &path).unwrap();
    assert_eq!(fs::read(&path).unwrap(), bytes);
}

#[test]
fn metrics_csv_round_trips() {
    let rows: Vec<EpochMetrics> = (0..3)
        .map(|e| EpochMetrics {
            epoch: e,
            split: if e % 2 == 0 { "train" } else { "val" }.into(),
            loss: 1.0 / (e as f64 + 1.0),
            error_rate: 0.1 * e as f64,
            wall_time_s: 0.5 * e as f64,
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    write_metrics_csv(&path, "algorithm=ss seed=0", &rows).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# tsnet-metrics v1 algorithm=ss seed=0\nepoch,split,loss,error_rate,wall_time_s\n"));
    assert_eq!(read_metrics_csv(&path).unwrap(), rows);
}

#[test]
fn mnist_subset_loads() {
    let ds = load_idx(
        mnist_dir().join("images-idx3-ubyte.gz"),
        mnist_dir().join("labels-idx1-ubyte.gz"),
    )
    .unwrap();
    assert_eq!(ds.len(), 10_000);
    assert_eq!(ds.input_dim(), 784);
    assert_eq!(ds.classes, 10);
    assert_eq!(ds.image_shape, Some((28, 28)));
    assert!(ds.inputs.iter().flatten().all(|&v| (0.0..=1.0).contains(&v)));
    let mut counts = [0usize; 10];
    ds.labels.iter().for_each(|&y| counts[y] += 1);
    assert!(counts.iter().all(|&c| c > 500), "{counts:?}");
}

#[test]
fn label_file_with_image_magic_is_rejected() {
    let mut bytes = 2051u32.to_be_bytes().to_vec();
    bytes.extend_from_slice(&1u32.to_be_bytes());
    bytes.push(3);
    assert!(parse_idx_labels(&bytes).unwrap_err().contains("magic"));
}

#[test]
fn pca_retained_variance_grows_with_dimension() {
    let ds = load_idx(
        mnist_dir().join("images-idx3-ubyte.gz"),
        mnist_dir().join("labels-idx1-ubyte.gz"),
    )
    .unwrap();
    let rows: Vec<&Vec<f64>> = ds.inputs.iter().take(2000).collect();
    let pca = Pca::fit(&rows, 32).unwrap();
    // eigenvalue-sum oracle: retained fraction at k is a partial sum
    let total: f64 = pca.eigenvalues.iter().sum();
    let mut previous = 0.0;
    for k in 1..=32 {
        let kept: f64 = pca.eigenvalues[..k].iter().sum::<f64>() / total;
        assert!(kept >= previous);
        previous = kept;
    }
    assert!((previous - pca.retained_variance()).abs() < 1e-12);
    assert!(previous > 0.5 && previous < 1.0, "{previous}");
}

#[test]
fn xor_clusters_defeat_linear_classifiers() {
    let cfg = SynthConfig { xor: true, dim: 2, points: 2000, spread: 0.35, seed: 7, ..Default::default() };
    let ds = synth_clusters(&cfg).unwrap();
    let acc = common::logistic_accuracy(&ds.inputs, &ds.labels, 2000);
    assert!((0.45..=0.55).contains(&acc), "{acc}");
    assert_eq!(synth_clusters(&cfg).unwrap(), ds);
}

#[test]
fn tight_clusters_are_separated_by_nearest_centroid() {
    let cfg = SynthConfig { spread: 0.0, classes: 4, points: 200, ..Default::default() };
    let ds = synth_clusters(&cfg).unwrap();
    let centroids: Vec<&Vec<f64>> = (0..4).map(|c| &ds.inputs[c]).collect();
    for (x, &y) in ds.inputs.iter().zip(&ds.labels) {
        let nearest = (0..4)
            .min_by(|&a, &b| {
                let d = |c: &Vec<f64>| x.iter().zip(c).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
                d(centroids[a]).total_cmp(&d(centroids[b]))
            })
            .unwrap();
        assert_eq!(nearest, y);
    }
}

#[test]
fn splits_partition_the_examples() {
    let ds = synth_clusters(&SynthConfig::default()).unwrap().carve_splits(400, 100, 100).unwrap();
    let mut seen = vec![0; ds.len()];
    for s in Split::ALL {
        for i in ds.indices(s) {
            seen[i] += 1;
        }
    }
    assert!(seen.iter().all(|&c| c == 1));
    assert_eq!(ds.indices(Split::Val), (400..500).collect::<Vec<_>>());
}

#[test]
fn weights_survive_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for mode in [Mode::Ss, Mode::Ts, Mode::TsLrc] {
        let spec = NetworkSpec::new(vec![3, 4, 2], mode, 2).unwrap();
        let w = init_weights(&spec, 1.0, 9).unwrap();
        let path = dir.path().join(format!("{mode}.tsnw"));
        write_weights(&w, &path).unwrap();
        assert_eq!(read_weights(&path).unwrap(), w);
    }
}

fn small_experiment(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml_str(
        r#"
        algorithms = ["ss", "lrc"]
        seeds = [0, 1]
        [data]
        source = "synthetic"
        train = 300
        val = 100
        test = 200
        [network]
        hidden = [8, 8]
        [train]
        epochs = 1
        batch_size = 32
        "#,
    )
    .unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

#[test]
fn one_epoch_runs_report_matching_one_pass_and_best_errors() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&small_experiment(dir.path())).unwrap();
    assert_eq!(report.runs.len(), 4);
    for run in &report.runs {
        assert_eq!(run.one_pass_test_error, run.asymptotic_test_error);
        assert_eq!(run.best_epoch, 1);
    }
}

#[test]
fn paired_table_agrees_with_raw_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_experiment(dir.path());
    let report = run_experiment(&cfg).unwrap();
    let one_pass = |alg, seed| {
        read_metrics_csv(dir.path().join(metrics_file_name(alg, seed)))
            .unwrap()
            .into_iter()
            .find(|m| m.epoch == 1 && m.split == "test")
            .unwrap()
            .error_rate
    };
    let table = fs::read_to_string(dir.path().join("paired.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "seed,ss_one_pass_test_error,lrc_one_pass_test_error,difference");
    for (seed, line) in (0..2).zip(lines) {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let (ss, lrc) = (one_pass(Algorithm::SsBp, seed), one_pass(Algorithm::Lrc, seed));
        assert_eq!(f, vec![seed as f64, ss, lrc, ss - lrc]);
    }
    assert_eq!(report.paired.len(), 2);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"].as_array().unwrap().len(), 4);
}

#[test]
fn failures_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_experiment(dir.path());
    cfg.data.source = tsnet::harness::experiment::SourceKind::Idx;
    cfg.data.images = dir.path().join("missing-images");
    let err = run_experiment(&cfg).unwrap_err().to_string();
    assert!(err.contains("load data"), "{err}");
}
