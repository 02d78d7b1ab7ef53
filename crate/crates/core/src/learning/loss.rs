use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    SoftmaxCrossEntropy,
    /// `0.5 * ||scores - target||^2`, the ridge regression objective.
    SquaredError,
}

/// Loss and its gradient with respect to the scores.
pub fn loss_and_grad(scores: &[f64], target: &[f64], kind: LossKind) -> Result<(f64, Vec<f64>)> {
    if scores.len() != target.len() || scores.is_empty() {
        return Err(Error::shape(format!(
            "{} scores against {} targets",
            scores.len(),
            target.len()
        )));
    }
    match kind {
        LossKind::SquaredError => {
            let grad: Vec<f64> = scores.iter().zip(target).map(|(s, y)| s - y).collect();
            let loss = 0.5 * grad.iter().map(|d| d * d).sum::<f64>();
            Ok((loss, grad))
        }
        LossKind::SoftmaxCrossEntropy => {
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            let log_z = max + sum_exp.ln();
            let mass: f64 = target.iter().sum();
            let loss = target
                .iter()
                .zip(scores)
                .map(|(y, s)| y * (log_z - s))
                .sum();
            let grad = scores
                .iter()
                .zip(target)
                .map(|(s, y)| (s - log_z).exp() * mass - y)
                .collect();
            Ok((loss, grad))
        }
    }
}

pub fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    let mut y = vec![0.0; classes];
    y[label] = 1.0;
    y
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}
