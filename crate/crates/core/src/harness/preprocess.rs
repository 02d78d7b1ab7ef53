//! Padding, scaling, PCA and the optional constant coordinate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Zero-pad square images to this side length, centered.
    pub pad_to: Option<usize>,
    /// Affine map sending the training split's global minimum to 0 and
    /// maximum to 1.
    pub scale: bool,
    /// Project onto the leading principal components of the training split.
    pub pca_dim: Option<usize>,
    /// Append a coordinate equal to 1, the harness-level stand-in for a bias.
    pub append_constant: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            pad_to: None,
            scale: true,
            pca_dim: None,
            append_constant: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub pca_dim: Option<usize>,
    /// Fraction of training variance kept by PCA.
    pub retained_variance: Option<f64>,
    pub input_dim: usize,
}

/// Zero-pads every image to `side x side` with the original centered.
pub fn pad_images(ds: &mut Dataset, side: usize) -> Result<()> {
    let (rows, cols) = ds
        .image_shape
        .ok_or_else(|| Error::invalid("padding needs image-shaped inputs"))?;
    if side < rows || side < cols {
        return Err(Error::invalid(format!("cannot pad {rows}x{cols} images to {side}x{side}")));
    }
    let (top, left) = ((side - rows) / 2, (side - cols) / 2);
    for x in &mut ds.inputs {
        let mut padded = vec![0.0; side * side];
        for r in 0..rows {
            let dst = (top + r) * side + left;
            padded[dst..dst + cols].copy_from_slice(&x[r * cols..(r + 1) * cols]);
        }
        *x = padded;
    }
    ds.image_shape = Some((side, side));
    Ok(())
}

fn train_rows(ds: &Dataset) -> Vec<&Vec<f64>> {
    ds.inputs
        .iter()
        .zip(&ds.splits)
        .filter(|(_, &s)| s == Split::Train)
        .map(|(x, _)| x)
        .collect()
}

/// Min-max scaling with statistics from the training split only.
pub fn minmax_scale(ds: &mut Dataset) -> Result<()> {
    let (lo, hi) = train_rows(ds)
        .iter()
        .flat_map(|x| x.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return Err(Error::invalid("no training data to scale"));
    }
    let range = hi - lo;
    for v in ds.inputs.iter_mut().flatten() {
        *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
    }
    Ok(())
}

/// Principal components fitted on a set of rows.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k x n`, rows are orthonormal directions by decreasing variance.
    pub components: DMatrix<f64>,
    /// All covariance eigenvalues, decreasing.
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    pub fn fit(rows: &[&Vec<f64>], k: usize) -> Result<Self> {
        let p = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if p < 2 || n == 0 {
            return Err(Error::invalid("PCA needs at least two samples"));
        }
        if k == 0 || k > n {
            return Err(Error::invalid(format!("PCA dimension {k} outside [1, {n}]")));
        }
        let mut mean = vec![0.0; n];
        for r in rows {
            mean.iter_mut().zip(r.iter()).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= p as f64);
        let centered = DMatrix::from_fn(p, n, |i, j| rows[i][j] - mean[j]);
        let cov = (centered.transpose() * &centered) / (p as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let tol = eigenvalues[0] * 1e-12 * n as f64;
        if eigenvalues[k - 1] <= tol {
            let rank = eigenvalues.iter().filter(|&&v| v > tol).count();
            return Err(Error::invalid(format!(
                "training data has rank {rank}, below the requested PCA dimension {k}"
            )));
        }
        let components = DMatrix::from_fn(k, n, |r, c| eig.eigenvectors[(c, order[r])]);
        Ok(Self {
            mean,
            components,
            eigenvalues,
        })
    }

    pub fn dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn retained_variance(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        let kept: f64 = self.eigenvalues[..self.dim()].iter().sum();
        if total > 0.0 {
            kept / total
        } else {
            1.0
        }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let centered = DVector::from_iterator(x.len(), x.iter().zip(&self.mean).map(|(v, m)| v - m));
        (&self.components * centered).iter().copied().collect()
    }

    pub fn inverse_transform(&self, y: &[f64]) -> Vec<f64> {
        let y = DVector::from_column_slice(y);
        let x = self.components.transpose() * y;
        x.iter().zip(&self.mean).map(|(v, m)| v + m).collect()
    }
}

/// Applies padding, scaling, PCA and the constant coordinate, in that order.
/// Every statistic is taken from the training split.
pub fn preprocess(mut ds: Dataset, cfg: &PreprocessConfig) -> Result<(Dataset, PreprocessReport)> {
    if let Some(side) = cfg.pad_to {
        pad_images(&mut ds, side)?;
    }
    if cfg.scale {
        minmax_scale(&mut ds)?;
    }
    let mut report = PreprocessReport::default();
    if let Some(k) = cfg.pca_dim {
        let pca = Pca::fit(&train_rows(&ds), k)?;
        for x in &mut ds.inputs {
            *x = pca.transform(x);
        }
        ds.image_shape = None;
        report.pca_dim = Some(k);
        report.retained_variance = Some(pca.retained_variance());
    }
    if cfg.append_constant {
        ds.inputs.iter_mut().for_each(|x| x.push(1.0));
        ds.image_shape = None;
    }
    report.input_dim = ds.input_dim();
    ds.validate()?;
    Ok((ds, report))
}
