//! Datasets: IDX files, synthetic clusters and split bookkeeping.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::LabeledSet;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// One tag per example.
    pub splits: Vec<Split>,
    /// Where the data came from.
    pub note: String,
    /// `(rows, cols)` when each input is a row-major image.
    pub image_shape: Option<(usize, usize)>,
}

impl Dataset {
    /// Builds a dataset with every example tagged [`Split::Train`].
    pub fn new(
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        classes: usize,
        note: impl Into<String>,
    ) -> Result<Self> {
        let splits = vec![Split::Train; inputs.len()];
        let ds = Self {
            inputs,
            labels,
            classes,
            splits,
            note: note.into(),
            image_shape: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.inputs.len();
        if self.labels.len() != p || self.splits.len() != p {
            return Err(Error::shape(format!(
                "{p} inputs, {} labels, {} split tags",
                self.labels.len(),
                self.splits.len()
            )));
        }
        if let Some(&y) = self.labels.iter().find(|&&y| y >= self.classes) {
            return Err(Error::invalid(format!("label {y} outside [0, {})", self.classes)));
        }
        let dim = self.input_dim();
        if self.inputs.iter().any(|x| x.len() != dim) {
            return Err(Error::shape("inputs have different lengths"));
        }
        if let Some(index) = self.inputs.iter().flatten().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if let Some((r, c)) = self.image_shape {
            if r * c != dim {
                return Err(Error::shape(format!("image shape {r}x{c} for inputs of length {dim}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&p| self.splits[p] == split).collect()
    }

    /// Copies the examples tagged `split`, in index order.
    pub fn subset(&self, split: Split) -> LabeledSet {
        let idx = self.indices(split);
        LabeledSet {
            inputs: idx.iter().map(|&p| self.inputs[p].clone()).collect(),
            labels: idx.iter().map(|&p| self.labels[p]).collect(),
        }
    }

    /// Keeps the first `train + val + test` examples and tags them in that
    /// order, so validation is the tail of the training block.
    pub fn carve_splits(mut self, train: usize, val: usize, test: usize) -> Result<Self> {
        let total = train + val + test;
        if total > self.len() {
            return Err(Error::invalid(format!(
                "requested {train}+{val}+{test} examples, dataset has {}",
                self.len()
            )));
        }
        if train == 0 {
            return Err(Error::invalid("training split must be non-empty"));
        }
        self.inputs.truncate(total);
        self.labels.truncate(total);
        self.splits = std::iter::repeat_n(Split::Train, train)
            .chain(std::iter::repeat_n(Split::Val, val))
            .chain(std::iter::repeat_n(Split::Test, test))
            .collect();
        Ok(self)
    }
}

/// Reads a file, inflating it first when it starts with the gzip magic.
fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> std::result::Result<u32, String> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format!("truncated header: need {} bytes, file has {}", at + 4, bytes.len()))
}

/// Parses an IDX image file into `(rows, cols, pixels scaled to [0, 1])`.
pub fn parse_idx_images(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<Vec<f64>>), String> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format!("bad magic {magic}, expected {IDX_IMAGES_MAGIC} for images"));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let expected = 16 + n * size;
    if bytes.len() != expected {
        return Err(format!(
            "payload size mismatch: expected {expected} bytes, found {}",
            bytes.len()
        ));
    }
    let images = bytes[16..]
        .chunks_exact(size.max(1))
        .take(n)
        .map(|img| img.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect();
    Ok((rows, cols, images))
}

pub fn parse_idx_labels(bytes: &[u8]) -> std::result::Result<Vec<usize>, String> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format!("bad magic {magic}, expected {IDX_LABELS_MAGIC} for labels"));
    }
    let n = be_u32(bytes, 4)? as usize;
    let expected = 8 + n;
    if bytes.len() != expected {
        return Err(format!(
            "payload size mismatch: expected {expected} bytes, found {}",
            bytes.len()
        ));
    }
    Ok(bytes[8..].iter().map(|&b| usize::from(b)).collect())
}

/// Loads an IDX image/label pair, gzip-compressed or not. Every example is
/// tagged [`Split::Train`]; use [`Dataset::carve_splits`] afterwards.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    fn format_err(path: &Path) -> impl Fn(String) -> Error + '_ {
        move |reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        }
    }
    let (rows, cols, inputs) = parse_idx_images(&read_maybe_gzip(images)?).map_err(format_err(images))?;
    let ys = parse_idx_labels(&read_maybe_gzip(labels)?).map_err(format_err(labels))?;
    if inputs.len() != ys.len() {
        return Err(Error::Format {
            path: labels.to_path_buf(),
            reason: format!("{} labels for {} images", ys.len(), inputs.len()),
        });
    }
    let classes = ys.iter().max().map_or(1, |&m| m + 1);
    let mut ds = Dataset::new(
        inputs,
        ys,
        classes,
        format!("IDX {} + {}", images.display(), labels.display()),
    )?;
    ds.image_shape = Some((rows, cols));
    ds.validate()?;
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub points: usize,
    pub dim: usize,
    /// Standard deviation of each cluster around its center.
    pub spread: f64,
    pub seed: u64,
    /// Two classes from four clusters at `(+-1, +-1)` in the first two
    /// coordinates; the class is the sign of their product. Further
    /// coordinates are pure noise.
    pub xor: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            points: 600,
            dim: 4,
            spread: 0.3,
            seed: 0,
            xor: false,
        }
    }
}

/// Seeded Gaussian clusters. Point `p` belongs to cluster `p mod k`, so the
/// classes are balanced; in the default mode each class has one center drawn
/// from `N(0, I)`.
pub fn synth_clusters(cfg: &SynthConfig) -> Result<Dataset> {
    if !(cfg.spread >= 0.0 && cfg.spread.is_finite()) {
        return Err(Error::invalid(format!("spread must be non-negative, got {}", cfg.spread)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (centers, classes): (Vec<(Vec<f64>, usize)>, usize) = if cfg.xor {
        if cfg.dim < 2 {
            return Err(Error::invalid("XOR clusters need at least two dimensions"));
        }
        let quad = [(1.0, 1.0, 0), (-1.0, -1.0, 0), (1.0, -1.0, 1), (-1.0, 1.0, 1)];
        let centers = quad
            .iter()
            .map(|&(a, b, y)| {
                let mut c = vec![0.0; cfg.dim];
                c[0] = a;
                c[1] = b;
                (c, y)
            })
            .collect();
        (centers, 2)
    } else {
        if cfg.classes < 2 || cfg.dim == 0 {
            return Err(Error::invalid("need at least two classes and one dimension"));
        }
        let centers = (0..cfg.classes)
            .map(|y| ((0..cfg.dim).map(|_| rng.sample(StandardNormal)).collect(), y))
            .collect();
        (centers, cfg.classes)
    };
    let mut inputs = Vec::with_capacity(cfg.points);
    let mut labels = Vec::with_capacity(cfg.points);
    for p in 0..cfg.points {
        let (center, y) = &centers[p % centers.len()];
        inputs.push(
            center
                .iter()
                .map(|&c| c + cfg.spread * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
        labels.push(*y);
    }
    let kind = if cfg.xor { "xor" } else { "gaussian" };
    Dataset::new(
        inputs,
        labels,
        classes,
        format!(
            "synthetic {kind} clusters: {} points, dim {}, spread {}, seed {}",
            cfg.points, cfg.dim, cfg.spread, cfg.seed
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        [
            &IDX_IMAGES_MAGIC.to_be_bytes()[..],
            &n.to_be_bytes(),
            &rows.to_be_bytes(),
            &cols.to_be_bytes(),
            pixels,
        ]
        .concat()
    }

    #[test]
    fn parses_images_big_endian() {
        let bytes = idx_images(2, 1, 2, &[0, 255, 51, 102]);
        let (r, c, imgs) = parse_idx_images(&bytes).unwrap();
        assert_eq!((r, c), (1, 2));
        assert_eq!(imgs, vec![vec![0.0, 1.0], vec![0.2, 0.4]]);
    }

    #[test]
    fn rejects_swapped_magic() {
        let labels = [&IDX_IMAGES_MAGIC.to_be_bytes()[..], &1u32.to_be_bytes(), &[3]].concat();
        assert!(parse_idx_labels(&labels).unwrap_err().contains("bad magic 2051"));
        let ok = [&IDX_LABELS_MAGIC.to_be_bytes()[..], &1u32.to_be_bytes(), &[3]].concat();
        assert_eq!(parse_idx_labels(&ok).unwrap(), vec![3]);
    }

    #[test]
    fn truncated_payload_names_sizes() {
        let bytes = idx_images(2, 2, 2, &[1, 2, 3, 4, 5]);
        let err = parse_idx_images(&bytes).unwrap_err();
        assert!(err.contains("expected 24 bytes, found 21"), "{err}");
        assert!(parse_idx_images(&bytes[..6]).unwrap_err().contains("truncated"));
    }

    #[test]
    fn carve_splits_keeps_validation_at_the_tail_of_train() {
        let ds = Dataset::new((0..10).map(|k| vec![k as f64]).collect(), vec![0; 10], 2, "toy").unwrap();
        let ds = ds.carve_splits(5, 2, 3).unwrap();
        assert_eq!(ds.indices(Split::Train), vec![0, 1, 2, 3, 4]);
        assert_eq!(ds.indices(Split::Val), vec![5, 6]);
        assert_eq!(ds.indices(Split::Test), vec![7, 8, 9]);
        assert!(ds.clone().carve_splits(8, 2, 1).is_err());
    }

    #[test]
    fn synth_is_seeded() {
        let cfg = SynthConfig::default();
        assert_eq!(synth_clusters(&cfg).unwrap(), synth_clusters(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg };
        assert_ne!(synth_clusters(&cfg).unwrap().inputs, synth_clusters(&other).unwrap().inputs);
    }

    #[test]
    fn zero_spread_collapses_to_centers() {
        let ds = synth_clusters(&SynthConfig { spread: 0.0, ..Default::default() }).unwrap();
        for p in 0..ds.len() {
            assert_eq!(ds.inputs[p], ds.inputs[p % 3]);
            assert_eq!(ds.labels[p], p % 3);
        }
    }

    #[test]
    fn xor_labels_follow_quadrant_product() {
        let ds = synth_clusters(&SynthConfig { xor: true, dim: 2, points: 400, spread: 0.2, ..Default::default() }).unwrap();
        assert_eq!(ds.classes, 2);
        let agree = ds
            .inputs
            .iter()
            .zip(&ds.labels)
            .filter(|(x, &y)| usize::from(x[0] * x[1] < 0.0) == y)
            .count();
        assert!(agree as f64 / 400.0 > 0.99);
    }
}
