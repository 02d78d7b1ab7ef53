//! Independent oracles shared by the integration tests. Everything here is
//! written with plain loops or nalgebra so it does not reuse the code paths
//! under test.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tsnet::learning::loss::{loss_and_grad, one_hot, LossKind};
use tsnet::network::forward;
use tsnet::{DenseTensor, Weights};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseTensor {
    DenseTensor::matrix(rows, cols, gaussian_vec(rng, rows * cols)).unwrap()
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / n).collect()
}

/// `max(0, W x)` by explicit loops.
pub fn relu_layer(w: &DenseTensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|j| {
            let s: f64 = (0..w.cols()).map(|i| w.get(&[j, i]) * x[i]).sum();
            s.max(0.0)
        })
        .collect()
}

/// SS activations of the top hidden layer.
pub fn ss_top(layers: &[DenseTensor], x: &[f64]) -> Vec<f64> {
    layers.iter().fold(x.to_vec(), |h, w| relu_layer(w, &h))
}

pub fn linear(w: &DenseTensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| (0..w.cols()).map(|c| w.get(&[r, c]) * x[c]).sum())
        .collect()
}

/// Jacobian of `A_k[.., j] = sum_i A_{k-1}[.., j, i] W[j, i]` with `lead`
/// leading positions, as a dense `(lead n) x (lead n d)` matrix.
pub fn contraction_jacobian(w: &DenseTensor, lead: usize) -> DMatrix<f64> {
    let (n, d) = (w.rows(), w.cols());
    let mut jac = DMatrix::zeros(lead * n, lead * n * d);
    for a in 0..lead {
        for j in 0..n {
            for i in 0..d {
                jac[(a * n + j, (a * n + j) * d + i)] = w.get(&[j, i]);
            }
        }
    }
    jac
}

pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().pseudo_inverse(1e-13).unwrap()
}

/// Softmax cross-entropy of the network output on one example.
pub fn example_loss(w: &Weights, x: &[f64], label: usize) -> f64 {
    let out = forward(w, x, false).unwrap().output;
    loss_and_grad(&out, &one_hot(label, w.spec.classes()), LossKind::SoftmaxCrossEntropy)
        .unwrap()
        .0
}

pub fn masks(w: &Weights, x: &[f64]) -> Vec<Vec<bool>> {
    forward(w, x, false).unwrap().masks
}

/// Central difference of `example_loss` along entry `k` of tensor `t`
/// (tensors in `Weights::tensors` order). `None` when the perturbation flips
/// an activation.
pub fn central_difference(w: &Weights, t: usize, k: usize, x: &[f64], label: usize, h: f64) -> Option<f64> {
    let base = masks(w, x);
    let probe = |delta: f64| {
        let mut p = w.clone();
        p.tensors_mut().nth(t).unwrap().data_mut()[k] += delta;
        (masks(&p, x) == base).then(|| example_loss(&p, x, label))
    };
    let up = probe(h)?;
    let down = probe(-h)?;
    Some((up - down) / (2.0 * h))
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Training accuracy of a least-squares linear classifier with bias,
/// fitting `+-1` targets.
pub fn least_squares_accuracy(inputs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let p = inputs.len();
    let d = inputs[0].len() + 1;
    let x = DMatrix::from_fn(p, d, |r, c| if c + 1 == d { 1.0 } else { inputs[r][c] });
    let y = DVector::from_fn(p, |r, _| if labels[r] == 1 { 1.0 } else { -1.0 });
    let beta = (x.transpose() * &x).cholesky().unwrap().solve(&(x.transpose() * &y));
    let pred = &x * beta;
    (0..p)
        .filter(|&r| usize::from(pred[r] > 0.0) == labels[r])
        .count() as f64
        / p as f64
}

/// Training accuracy of binary logistic regression with bias, fitted by
/// full-batch gradient descent.
pub fn logistic_accuracy(inputs: &[Vec<f64>], labels: &[usize], steps: usize) -> f64 {
    let d = inputs[0].len();
    let mut w = vec![0.0; d + 1];
    let p = inputs.len() as f64;
    for _ in 0..steps {
        let mut g = vec![0.0; d + 1];
        for (x, &y) in inputs.iter().zip(labels) {
            let z: f64 = w[d] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let r = 1.0 / (1.0 + (-z).exp()) - y as f64;
            for i in 0..d {
                g[i] += r * x[i];
            }
            g[d] += r;
        }
        for i in 0..=d {
            w[i] -= 0.5 * g[i] / p;
        }
    }
    inputs
        .iter()
        .zip(labels)
        .filter(|(x, &y)| {
            let z: f64 = w[d] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            usize::from(z > 0.0) == y
        })
        .count() as f64
        / p
}
