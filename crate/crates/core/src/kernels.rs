//! Equivalent kernels of infinitely wide random SS and TS ReLU networks.
//!
//! Starting from `k_0(x, y) = x'y`, each layer maps the SS triple
//! `(k_xy, k_xx, k_yy)` through the order-1 arc-cosine step and multiplies the
//! TS value by `1 - theta/pi`, where `theta` is the generalized angle of the
//! SS kernel at the layer below. The TS recursion never uses its own angle.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, dot, is_active, DenseTensor};

/// Normalized kernels may exceed `[-1, 1]` (and angles `[0, pi]`) by this much
/// from rounding before it counts as an error.
pub const CLAMP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Ss,
    Ts,
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ss" => Ok(KernelKind::Ss),
            "ts" => Ok(KernelKind::Ts),
            other => Err(Error::invalid(format!("unknown kernel kind `{other}`"))),
        }
    }
}

/// Kernel values for a pair of inputs at one depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelState {
    pub depth: usize,
    pub k_ss_xy: f64,
    pub k_ss_xx: f64,
    pub k_ss_yy: f64,
    pub k_ts_xy: f64,
    /// Generalized angle of the SS kernel at this depth.
    pub theta_ss: f64,
}

impl KernelState {
    pub fn value(&self, kind: KernelKind) -> f64 {
        match kind {
            KernelKind::Ss => self.k_ss_xy,
            KernelKind::Ts => self.k_ts_xy,
        }
    }

    /// TS kernel divided by `sqrt(k(x,x) k(y,y))`; TS self-kernels stay `x'x`.
    pub fn normalized_ts(&self) -> f64 {
        self.k_ts_xy / (self.k_ss_xx * self.k_ss_yy).sqrt()
    }
}

/// `arccos(k_xy / sqrt(k_xx k_yy))` with clamping of rounding excursions.
pub fn generalized_angle(k_xy: f64, k_xx: f64, k_yy: f64) -> Result<f64> {
    if k_xx < 0.0 || k_yy < 0.0 {
        return Err(Error::invalid(format!(
            "negative self-kernel ({k_xx}, {k_yy})"
        )));
    }
    let norm = (k_xx * k_yy).sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let r = k_xy / norm;
    if r.abs() > 1.0 + CLAMP_TOLERANCE || r.is_nan() {
        return Err(Error::CauchySchwarz(r));
    }
    Ok(r.clamp(-1.0, 1.0).acos())
}

/// TS multiplier `1 - theta/pi`.
pub fn kbar_ts(theta: f64) -> Result<f64> {
    if !(-CLAMP_TOLERANCE..=PI + CLAMP_TOLERANCE).contains(&theta) {
        return Err(Error::invalid(format!("angle {theta} outside [0, pi]")));
    }
    Ok(1.0 - theta.clamp(0.0, PI) / PI)
}

/// One SS layer in the stable arc-cosine form
/// `(1/pi) sqrt(k_xx k_yy) (sin t + (pi - t) cos t)`.
pub fn k_ss_step(k_xy: f64, k_xx: f64, k_yy: f64) -> Result<f64> {
    let theta = generalized_angle(k_xy, k_xx, k_yy)?;
    Ok(arc_cosine_step(theta, (k_xx * k_yy).sqrt()))
}

fn arc_cosine_step(theta: f64, norm: f64) -> f64 {
    norm * (theta.sin() + (PI - theta) * theta.cos()) / PI
}

/// Depth-0 state from raw kernel values `x'y`, `x'x`, `y'y`.
pub fn initial_state(k_xy: f64, k_xx: f64, k_yy: f64) -> Result<KernelState> {
    if k_xx <= 0.0 || k_yy <= 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(KernelState {
        depth: 0,
        k_ss_xy: k_xy,
        k_ss_xx: k_xx,
        k_ss_yy: k_yy,
        k_ts_xy: k_xy,
        theta_ss: generalized_angle(k_xy, k_xx, k_yy)?,
    })
}

/// Advances both recursions by one layer.
pub fn next_state(s: &KernelState) -> Result<KernelState> {
    let k_ts_xy = kbar_ts(s.theta_ss)? * s.k_ts_xy;
    let k_ss_xy = arc_cosine_step(s.theta_ss, (s.k_ss_xx * s.k_ss_yy).sqrt());
    Ok(KernelState {
        depth: s.depth + 1,
        k_ss_xy,
        k_ss_xx: s.k_ss_xx,
        k_ss_yy: s.k_ss_yy,
        k_ts_xy,
        theta_ss: generalized_angle(k_ss_xy, s.k_ss_xx, s.k_ss_yy)?,
    })
}

/// States for depths `0..=depth`.
pub fn kernel_trajectory(x: &[f64], y: &[f64], depth: usize) -> Result<Vec<KernelState>> {
    if x.len() != y.len() {
        return Err(Error::shape(format!(
            "inputs of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    trajectory_from(initial_state(dot(x, y), dot(x, x), dot(y, y))?, depth)
}

/// Trajectory for unit vectors separated by `theta`.
pub fn angle_trajectory(theta: f64, depth: usize) -> Result<Vec<KernelState>> {
    trajectory_from(initial_state(theta.cos(), 1.0, 1.0)?, depth)
}

fn trajectory_from(start: KernelState, depth: usize) -> Result<Vec<KernelState>> {
    let mut states = Vec::with_capacity(depth + 1);
    states.push(start);
    for _ in 0..depth {
        let next = next_state(states.last().expect("non-empty"))?;
        states.push(next);
    }
    Ok(states)
}

/// Kernel state of the pair at `depth >= 1`.
pub fn deep_kernel_pair(x: &[f64], y: &[f64], depth: usize) -> Result<KernelState> {
    if depth == 0 {
        return Err(Error::invalid("kernel depth must be at least 1"));
    }
    Ok(*kernel_trajectory(x, y, depth)?.last().expect("non-empty"))
}

pub fn kernel_value(x: &[f64], y: &[f64], depth: usize, kind: KernelKind) -> Result<f64> {
    Ok(deep_kernel_pair(x, y, depth)?.value(kind))
}

/// Monte Carlo estimate of the single-layer TS kernel,
/// `(2/n1) sum_j H(w_j'x) H(w_j'y) x'y` with `w_j ~ N(0, sigma^2 I)`.
///
/// The estimate depends on the weights only through their signs, so the same
/// seed gives the same value for every `sigma > 0`.
pub fn mc_kernel_oracle(x: &[f64], y: &[f64], n1: usize, sigma: f64, seed: u64) -> Result<f64> {
    if n1 == 0 {
        return Err(Error::invalid("n1 must be at least 1"));
    }
    if x.len() != y.len() {
        return Err(Error::shape("inputs differ in length"));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; x.len()];
    let mut both = 0u64;
    for _ in 0..n1 {
        w.iter_mut()
            .for_each(|v| *v = rng.sample::<f64, _>(StandardNormal));
        if is_active(sigma * dot(&w, x)) && is_active(sigma * dot(&w, y)) {
            both += 1;
        }
    }
    Ok(2.0 * both as f64 / n1 as f64 * dot(x, y))
}

/// Binomial standard error of [`mc_kernel_oracle`] for a pair at angle
/// `theta` with inner product `xty`.
pub fn mc_standard_error(theta: f64, xty: f64, n1: usize) -> f64 {
    let p = (PI - theta) / (2.0 * PI);
    2.0 * xty.abs() * (p * (1.0 - p) / n1 as f64).sqrt()
}

/// Scaled dot product of the finite-width expansions,
/// `vec(sqrt(2/n1) x (+) W)' vec(sqrt(2/n1) y (+) W)`.
pub fn finite_width_kernel(x: &[f64], y: &[f64], w: &DenseTensor) -> Result<f64> {
    let ex = tensor::expand(&DenseTensor::vector(x.to_vec())?, w)?;
    let ey = tensor::expand(&DenseTensor::vector(y.to_vec())?, w)?;
    Ok(2.0 / w.rows() as f64 * dot(ex.data(), ey.data()))
}

/// Symmetric Gram matrix of the depth-`depth` kernel.
pub fn gram_matrix(points: &[Vec<f64>], depth: usize, kind: KernelKind) -> Result<DMatrix<f64>> {
    let n = points.len();
    let mut g = DMatrix::zeros(n, n);
    for p in 0..n {
        for q in p..n {
            let k = kernel_value(&points[p], &points[q], depth, kind)?;
            g[(p, q)] = k;
            g[(q, p)] = k;
        }
    }
    Ok(g)
}

/// Kernel between every query (rows) and every training point (columns).
pub fn cross_gram(
    queries: &[Vec<f64>],
    train: &[Vec<f64>],
    depth: usize,
    kind: KernelKind,
) -> Result<DMatrix<f64>> {
    let mut g = DMatrix::zeros(queries.len(), train.len());
    for (a, x) in queries.iter().enumerate() {
        for (b, t) in train.iter().enumerate() {
            g[(a, b)] = kernel_value(x, t, depth, kind)?;
        }
    }
    Ok(g)
}

pub(crate) fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Dual coefficients `(G + lambda I)^{-1} Y` for targets `Y` (points x outputs).
pub fn kernel_ridge_fit(g: &DMatrix<f64>, targets: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !g.is_square() || g.nrows() != targets.nrows() {
        return Err(Error::shape(format!(
            "Gram {}x{} with {} target rows",
            g.nrows(),
            g.ncols(),
            targets.nrows()
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid("ridge parameter must be positive"));
    }
    let mut a = g.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    match a.clone().cholesky() {
        Some(chol) => Ok(chol.solve(targets)),
        None => Err(Error::Singular {
            what: "G + lambda I is not positive definite",
            condition: condition_estimate(&a),
        }),
    }
}

/// Scores `sum_p coeffs[p, :] k(x_p, x)`.
pub fn kernel_predict(
    coeffs: &DMatrix<f64>,
    train: &[Vec<f64>],
    x: &[f64],
    depth: usize,
    kind: KernelKind,
) -> Result<Vec<f64>> {
    if coeffs.nrows() != train.len() {
        return Err(Error::shape("one coefficient row per training point is required"));
    }
    let mut scores = vec![0.0; coeffs.ncols()];
    for (p, t) in train.iter().enumerate() {
        let k = kernel_value(t, x, depth, kind)?;
        for (c, s) in scores.iter_mut().enumerate() {
            *s += coeffs[(p, c)] * k;
        }
    }
    Ok(scores)
}

pub fn one_hot_matrix(labels: &[usize], classes: usize) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(labels.len(), classes);
    for (p, &c) in labels.iter().enumerate() {
        y[(p, c)] = 1.0;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_pair(theta: f64) -> (Vec<f64>, Vec<f64>) {
        (vec![1.0, 0.0, 0.0], vec![theta.cos(), theta.sin(), 0.0])
    }

    #[test]
    fn kbar_ts_values() {
        assert_eq!(kbar_ts(0.0).unwrap(), 1.0);
        assert_eq!(kbar_ts(PI).unwrap(), 0.0);
        assert_eq!(kbar_ts(PI / 2.0).unwrap(), 0.5);
        assert!(kbar_ts(PI + 1e-6).is_err());
        assert!(kbar_ts(-1e-6).is_err());
        assert_eq!(kbar_ts(PI + 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn k_ss_step_values() {
        assert!((k_ss_step(1.0, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(k_ss_step(-1.0, 1.0, 1.0).unwrap().abs() < 1e-15);
        assert!((k_ss_step(0.0, 1.0, 1.0).unwrap() - 1.0 / PI).abs() < 1e-15);
        assert!(k_ss_step(0.5, -1.0, 1.0).is_err());
        assert!(matches!(
            k_ss_step(1.5, 1.0, 1.0),
            Err(Error::CauchySchwarz(_))
        ));
    }

    #[test]
    fn deep_pair_examples() {
        let (x, y) = (vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]);
        for depth in 1..6 {
            assert_eq!(deep_kernel_pair(&x, &y, depth).unwrap().k_ts_xy.abs(), 0.0);
        }
        let (x, y) = unit_pair(PI / 3.0);
        let s1 = deep_kernel_pair(&x, &y, 1).unwrap();
        assert!((s1.k_ts_xy - 1.0 / 3.0).abs() < 1e-12);
        // reference values from an independent 40-digit evaluation
        let s2 = deep_kernel_pair(&x, &y, 2).unwrap();
        let theta1 = kernel_trajectory(&x, &y, 1).unwrap()[1].theta_ss;
        assert!((theta1 - 0.915_999_908_012_603_9).abs() < 1e-12);
        assert!((s2.k_ts_xy - 0.236_142_724_512_048_44).abs() < 1e-12);
    }

    #[test]
    fn k1_ts_is_linear_form() {
        let x = [0.3, -1.2, 2.0];
        let y = [1.1, 0.4, -0.5];
        let s = deep_kernel_pair(&x, &y, 1).unwrap();
        let theta = generalized_angle(dot(&x, &y), dot(&x, &x), dot(&y, &y)).unwrap();
        assert_eq!(s.k_ts_xy, (1.0 - theta / PI) * dot(&x, &y));
    }

    #[test]
    fn zero_input_rejected() {
        assert!(matches!(
            deep_kernel_pair(&[0.0, 0.0], &[1.0, 0.0], 1),
            Err(Error::ZeroNorm)
        ));
        assert!(deep_kernel_pair(&[1.0, 0.0], &[1.0, 0.0], 0).is_err());
    }

    #[test]
    fn mc_oracle_limits() {
        let x = [0.6, 0.8];
        let same = mc_kernel_oracle(&x, &x, 200_000, 1.0, 3).unwrap();
        assert!((same - 1.0).abs() < 0.01, "{same}");
        let opposite = mc_kernel_oracle(&x, &[-0.6, -0.8], 10_000, 1.0, 3).unwrap();
        assert_eq!(opposite, 0.0);
        assert!(mc_kernel_oracle(&x, &x, 0, 1.0, 3).is_err());
    }

    #[test]
    fn gram_small_cases() {
        let g = gram_matrix(&[vec![2.0, 0.0]], 3, KernelKind::Ts).unwrap();
        assert_eq!(g.shape(), (1, 1));
        assert!((g[(0, 0)] - 4.0).abs() < 1e-12);

        let pts = vec![vec![1.0, 0.2], vec![1.0, 0.2], vec![-0.3, 0.9]];
        let g = gram_matrix(&pts, 2, KernelKind::Ss).unwrap();
        assert_eq!(g.row(0), g.row(1));
        assert_eq!(g, g.transpose());
    }

    #[test]
    fn kernel_ridge_examples() {
        let g = DMatrix::identity(1, 1);
        let y = DMatrix::from_element(1, 1, 1.0);
        let c = kernel_ridge_fit(&g, &y, 1.0).unwrap();
        assert!((c[(0, 0)] - 0.5).abs() < 1e-15);

        let c = kernel_ridge_fit(&g, &y, 1e12).unwrap();
        assert!(c[(0, 0)].abs() < 1e-11);

        // two points, labels +1 / -1: G = [[1, a], [a, 1]]
        let a = 0.3;
        let g = DMatrix::from_row_slice(2, 2, &[1.0, a, a, 1.0]);
        let y = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let c = kernel_ridge_fit(&g, &y, 0.1).unwrap();
        // closed form: c = y / (1 + lambda - a) for antisymmetric labels
        assert!((c[(0, 0)] - 1.0 / (1.1 - a)).abs() < 1e-12);
        let pred = &g * &c;
        assert!(pred[(0, 0)] > 0.0 && pred[(1, 0)] < 0.0);

        assert!(kernel_ridge_fit(&g, &y, 0.0).is_err());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -5.0]);
        assert!(matches!(
            kernel_ridge_fit(&bad, &y, 0.5),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn kernel_predict_cases() {
        let train = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let coeffs = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, 0.25, 0.75]);
        let s = kernel_predict(&coeffs, &train, &[1.0, 0.0], 1, KernelKind::Ts).unwrap();
        // k(e1, e1) = 1, k(e2, e1) = 0 (orthogonal): scores equal row 0
        assert!((s[0] - 0.5).abs() < 1e-15 && (s[1] + 0.5).abs() < 1e-15);
        let zero = DMatrix::zeros(2, 2);
        let s = kernel_predict(&zero, &train, &[0.3, 0.4], 2, KernelKind::Ss).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
    }
}
