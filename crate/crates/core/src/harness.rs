//! Data loading, preprocessing, experiment orchestration and file exports.

pub mod data;
pub mod experiment;
pub mod export;
pub mod preprocess;

pub use data::{load_idx, synth_clusters, Dataset, Split, SynthConfig};
pub use experiment::{prepare_data, run_experiment, ExperimentConfig, ExperimentReport};
pub use preprocess::{preprocess, PreprocessConfig};
