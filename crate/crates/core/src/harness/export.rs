//! File outputs: metrics CSV, precomputed-kernel Gram files and filter images.
//!
//! # Gram file
//!
//! One line per point `p = 1..P`, fields separated by single spaces, lines
//! ending in `\n`:
//!
//! ```text
//! <label> 0:<p> 1:<G[p,1]> 2:<G[p,2]> ... P:<G[p,P]>
//! ```
//!
//! Values use Rust's shortest round-trip decimal form for `f64`, so parsing a
//! file gives back the in-memory matrix bit for bit.
//!
//! # Filter image
//!
//! Binary PGM (`P5`, maxval 255). Rows of `W_1` are reshaped to the input
//! image and each is mapped linearly from its own `[min, max]` to `[0, 255]`,
//! rounding to nearest; a constant filter becomes 128. Tiles are laid out
//! row-major on a grid with `ceil(sqrt(k))` columns, separated by 2-pixel
//! black (0) gutters; unused grid cells stay black.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernels::{gram_matrix, KernelKind};
use crate::learning::EpochMetrics;
use crate::network::Weights;

pub const METRICS_SCHEMA: &str = "# tsnet-metrics v1";
pub const FILTER_GUTTER: usize = 2;

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Writes metrics rows under a schema comment line. `context` is appended
/// to the comment (for example the algorithm and seed).
pub fn write_metrics_csv(path: impl AsRef<Path>, context: &str, rows: &[EpochMetrics]) -> Result<()> {
    let path = path.as_ref();
    let mut file = create(path)?;
    let comment = if context.is_empty() {
        format!("{METRICS_SCHEMA}\n")
    } else {
        format!("{METRICS_SCHEMA} {context}\n")
    };
    file.write_all(comment.as_bytes()).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<EpochMetrics>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if !text.starts_with(METRICS_SCHEMA) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("missing schema line {METRICS_SCHEMA:?}"),
        });
    }
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

/// Renders a Gram matrix in the precomputed-kernel text format.
pub fn format_gram(g: &DMatrix<f64>, labels: &[usize]) -> Result<String> {
    if !g.is_square() || g.nrows() != labels.len() {
        return Err(Error::shape(format!(
            "{}x{} Gram matrix with {} labels",
            g.nrows(),
            g.ncols(),
            labels.len()
        )));
    }
    let mut out = String::new();
    for (p, y) in labels.iter().enumerate() {
        out.push_str(&format!("{y} 0:{}", p + 1));
        for q in 0..g.ncols() {
            out.push_str(&format!(" {}:{}", q + 1, g[(p, q)]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses [`format_gram`] output back into labels and matrix.
pub fn parse_gram(text: &str) -> std::result::Result<(Vec<usize>, DMatrix<f64>), String> {
    let lines: Vec<&str> = text.lines().collect();
    let n = lines.len();
    let mut labels = Vec::with_capacity(n);
    let mut g = DMatrix::zeros(n, n);
    for (p, line) in lines.iter().enumerate() {
        let mut fields = line.split(' ');
        let label = fields.next().unwrap_or_default();
        labels.push(label.parse().map_err(|_| format!("line {}: bad label {label:?}", p + 1))?);
        let mut expected_index = 0;
        for field in fields {
            let (idx, val) = field
                .split_once(':')
                .ok_or_else(|| format!("line {}: field {field:?} lacks ':'", p + 1))?;
            let idx: usize = idx.parse().map_err(|_| format!("line {}: bad index {idx:?}", p + 1))?;
            if idx != expected_index || idx > n {
                return Err(format!(
                    "line {}: index {idx}, expected {expected_index} of at most {n}",
                    p + 1
                ));
            }
            if idx == 0 {
                let serial: usize = val.parse().map_err(|_| format!("line {}: bad serial", p + 1))?;
                if serial != p + 1 {
                    return Err(format!("line {}: serial {serial}", p + 1));
                }
            } else {
                g[(p, idx - 1)] = val
                    .parse()
                    .map_err(|_| format!("line {}: bad value {val:?}", p + 1))?;
            }
            expected_index += 1;
        }
        if expected_index != n + 1 {
            return Err(format!("line {}: {} fields, expected {}", p + 1, expected_index, n + 1));
        }
    }
    Ok((labels, g))
}

/// Computes the depth-`depth` Gram matrix of `points` and writes it to `path`.
pub fn export_gram(
    points: &[Vec<f64>],
    labels: &[usize],
    depth: usize,
    kind: KernelKind,
    path: impl AsRef<Path>,
) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let g = gram_matrix(points, depth, kind)?;
    let text = format_gram(&g, labels)?;
    create(path)?
        .write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    Ok(g)
}

/// Gray levels of one filter under per-filter min-max scaling.
pub fn filter_gray_levels(filter: &[f64]) -> Vec<u8> {
    let (lo, hi) = filter
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    filter
        .iter()
        .map(|&v| {
            if range > 0.0 {
                (255.0 * (v - lo) / range).round() as u8
            } else {
                128
            }
        })
        .collect()
}

/// Tiles the rows of `W_layer` into a PGM image.
///
/// Only layer 1 of a model whose inputs are `rows x cols` images qualifies.
pub fn render_filters(w: &Weights, layer: usize, image_shape: Option<(usize, usize)>) -> Result<Vec<u8>> {
    if layer != 1 {
        return Err(Error::invalid(format!(
            "filters are image-shaped only for layer 1, got layer {layer}"
        )));
    }
    let (rows, cols) = image_shape.ok_or_else(|| {
        Error::invalid("model inputs are not images (PCA or appended coordinates); filters cannot be drawn")
    })?;
    let w1 = &w.activation[0];
    if w1.cols() != rows * cols {
        return Err(Error::invalid(format!(
            "layer 1 has {} inputs, not a {rows}x{cols} image",
            w1.cols()
        )));
    }
    let k = w1.rows();
    let grid_cols = (1..=k).find(|c| c * c >= k).unwrap_or(1);
    let grid_rows = k.div_ceil(grid_cols);
    let width = grid_cols * cols + (grid_cols - 1) * FILTER_GUTTER;
    let height = grid_rows * rows + (grid_rows - 1) * FILTER_GUTTER;
    let mut pixels = vec![0u8; width * height];
    for f in 0..k {
        let gray = filter_gray_levels(w1.row(f));
        let (gy, gx) = (f / grid_cols, f % grid_cols);
        let (oy, ox) = (gy * (rows + FILTER_GUTTER), gx * (cols + FILTER_GUTTER));
        for r in 0..rows {
            let dst = (oy + r) * width + ox;
            pixels[dst..dst + cols].copy_from_slice(&gray[r * cols..(r + 1) * cols]);
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

pub fn export_filters(
    w: &Weights,
    layer: usize,
    image_shape: Option<(usize, usize)>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = render_filters(w, layer, image_shape)?;
    create(path)?.write_all(&bytes).map_err(|e| Error::io(path, e))
}
