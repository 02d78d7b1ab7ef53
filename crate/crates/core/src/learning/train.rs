//! Training loops for the five algorithms.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backward::{ibp_backward_into, lrc_backward_into, ss_backward_into, GradientSet};
use super::loss::{argmax, loss_and_grad, one_hot, LossKind};
use super::ridge::RidgeAccumulator;
use super::sgd::{sgd_step, MomentumState, SgdParams};
use crate::error::{Error, Result};
use crate::network::{forward, predict, ts_forward, Mode, Weights};

/// Examples per parallel work unit. Fixed, so per-batch sums are reduced in
/// the same order whatever the thread count.
const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    /// One-pass ridge regression of `W_Z` with frozen activation weights.
    #[serde(rename = "rr")]
    Rr,
    /// Inverted backpropagation.
    #[serde(rename = "ibp")]
    Ibp,
    /// Linear rotation-compression.
    #[serde(rename = "lrc")]
    Lrc,
    #[serde(rename = "ibp-lrc")]
    IbpLrc,
    /// Ordinary backpropagation through an SS network.
    #[serde(rename = "ss")]
    SsBp,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Rr,
        Algorithm::Ibp,
        Algorithm::Lrc,
        Algorithm::IbpLrc,
        Algorithm::SsBp,
    ];

    /// Network mode the algorithm trains.
    pub fn mode(self) -> Mode {
        match self {
            Algorithm::Rr | Algorithm::Ibp => Mode::Ts,
            Algorithm::Lrc | Algorithm::IbpLrc => Mode::TsLrc,
            Algorithm::SsBp => Mode::Ss,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Rr => "rr",
            Algorithm::Ibp => "ibp",
            Algorithm::Lrc => "lrc",
            Algorithm::IbpLrc => "ibp-lrc",
            Algorithm::SsBp => "ss",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm {s:?} (rr, ibp, lrc, ibp-lrc, ss)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    /// Loss minimized by the gradient algorithms.
    pub loss: LossKind,
    /// Ridge parameter for [`Algorithm::Rr`].
    pub ridge_lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-3,
            batch_size: 128,
            epochs: 10,
            seed: 0,
            loss: LossKind::SoftmaxCrossEntropy,
            ridge_lambda: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn sgd(&self) -> SgdParams {
        SgdParams {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sgd().validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.ridge_lambda >= super::ridge::MIN_LAMBDA) {
            return Err(Error::invalid(format!(
                "ridge_lambda must be at least {}, got {}",
                super::ridge::MIN_LAMBDA,
                self.ridge_lambda
            )));
        }
        Ok(())
    }
}

/// Inputs with integer class labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledSet {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(dim) = inputs.first().map(Vec::len) {
            if inputs.iter().any(|x| x.len() != dim) {
                return Err(Error::shape("inputs have different lengths"));
            }
        }
        if let Some(index) = inputs.iter().flatten().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn check_against(&self, w: &Weights) -> Result<()> {
        let classes = w.spec.classes();
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {classes})")));
        }
        match self.inputs.first() {
            Some(x) if x.len() != w.spec.input_dim() => Err(Error::shape(format!(
                "inputs have dimension {}, network expects {}",
                x.len(),
                w.spec.input_dim()
            ))),
            _ => Ok(()),
        }
    }
}

/// One row of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub error_rate: f64,
    /// Cumulative training time, evaluation excluded.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: Weights,
    pub metrics: Vec<EpochMetrics>,
}

/// Mean loss and error rate of `w` on `set`.
pub fn evaluate(w: &Weights, set: &LabeledSet, loss: LossKind) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    set.check_against(w)?;
    let classes = w.spec.classes();
    let idx: Vec<usize> = (0..set.len()).collect();
    let parts = idx
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<(f64, usize)> {
            let mut total = 0.0;
            let mut wrong = 0;
            for &p in chunk {
                let scores = predict(w, &set.inputs[p])?;
                let y = set.labels[p];
                total += loss_and_grad(&scores, &one_hot(y, classes), loss)?.0;
                wrong += usize::from(argmax(&scores) != y);
            }
            Ok((total, wrong))
        })
        .collect::<Result<Vec<_>>>()?;
    let (total, wrong) = parts
        .into_iter()
        .fold((0.0, 0), |(t, e), (pt, pe)| (t + pt, e + pe));
    let n = set.len() as f64;
    Ok((total / n, wrong as f64 / n))
}

/// Adds `vec(Z_L)` against `targets` for every input, sharded in fixed-size
/// chunks and merged in index order.
pub fn accumulate_expanded(
    w: &Weights,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    acc: &mut RidgeAccumulator,
) -> Result<()> {
    if inputs.len() != targets.len() {
        return Err(Error::shape("inputs and targets differ in length"));
    }
    if w.spec.mode() != Mode::Ts {
        return Err(Error::invalid("ridge regression needs TS weights"));
    }
    let empty = RidgeAccumulator::new_with_any_lambda(acc.dim(), acc.outputs(), acc.lambda())?;
    let idx: Vec<usize> = (0..inputs.len()).collect();
    let shards = idx
        .par_chunks(CHUNK * 8)
        .map(|chunk| -> Result<RidgeAccumulator> {
            let mut shard = empty.clone();
            for &p in chunk {
                let trace = ts_forward(w, &inputs[p])?;
                let z = trace.z_last().expect("TS trace carries Z_L");
                shard.accumulate(z.data(), &targets[p])?;
            }
            Ok(shard)
        })
        .collect::<Result<Vec<_>>>()?;
    for shard in &shards {
        acc.merge(shard)?;
    }
    Ok(())
}

/// One streaming pass over `set` followed by one solve for `W_Z`.
pub fn ridge_fit(w: &Weights, set: &LabeledSet, lambda: f64) -> Result<Weights> {
    check_ridge_budget(w)?;
    let classes = w.spec.classes();
    let targets: Vec<Vec<f64>> = set.labels.iter().map(|&y| one_hot(y, classes)).collect();
    let mut acc = RidgeAccumulator::new(w.spec.expanded_len(), classes, lambda)?;
    accumulate_expanded(w, &set.inputs, &targets, &mut acc)?;
    let mut fitted = w.clone();
    fitted.analysis = Some(acc.solve()?);
    Ok(fitted)
}

fn check_ridge_budget(w: &Weights) -> Result<()> {
    if w.spec.mode() != Mode::Ts {
        return Err(Error::invalid("ridge regression needs TS weights"));
    }
    if w.depth() != 1 {
        return Err(Error::invalid(format!(
            "ridge regression is limited to one hidden layer, got {}",
            w.depth()
        )));
    }
    let d = w.spec.expanded_len() as u128;
    if d * d > w.spec.memory_budget() {
        return Err(Error::MemoryBudget {
            required: d * d,
            budget: w.spec.memory_budget(),
        });
    }
    Ok(())
}

/// Summed loss and gradients over `batch`, reduced in chunk order.
fn batch_gradient(
    w: &Weights,
    set: &LabeledSet,
    batch: &[usize],
    alg: Algorithm,
    loss: LossKind,
) -> Result<(f64, GradientSet)> {
    let classes = w.spec.classes();
    let parts = batch
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<(f64, GradientSet)> {
            let mut g = GradientSet::zeros_like(w);
            let mut total = 0.0;
            for &p in chunk {
                let trace = forward(w, &set.inputs[p], true)?;
                let (l, g_out) = loss_and_grad(&trace.output, &one_hot(set.labels[p], classes), loss)?;
                total += l;
                match alg {
                    Algorithm::SsBp => ss_backward_into(&trace, w, &g_out, &mut g)?,
                    Algorithm::Ibp => ibp_backward_into(&trace, w, &g_out, &mut g)?,
                    Algorithm::Lrc => lrc_backward_into(&trace, w, &g_out, false, &mut g)?,
                    Algorithm::IbpLrc => lrc_backward_into(&trace, w, &g_out, true, &mut g)?,
                    Algorithm::Rr => unreachable!("ridge regression has no gradient step"),
                }
            }
            Ok((total, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut parts = parts.into_iter();
    let (mut total, mut sum) = parts.next().expect("non-empty batch");
    for (t, g) in parts {
        total += t;
        for (a, b) in sum.tensors_mut().zip(g.tensors()) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
    }
    Ok((total, sum))
}

/// Trains `initial` on `train`, recording metrics on `train` and every
/// named set in `eval` at epoch 0 (initial weights) and after each epoch.
///
/// Ridge regression makes exactly one pass and one solve and reports the
/// squared-error loss it minimizes; with `epochs == 0` nothing is trained.
pub fn train(
    initial: Weights,
    train: &LabeledSet,
    eval: &[(&str, &LabeledSet)],
    cfg: &TrainConfig,
    alg: Algorithm,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    initial.validate()?;
    if initial.spec.mode() != alg.mode() {
        return Err(Error::invalid(format!(
            "algorithm {alg} trains {} networks, weights are {}",
            alg.mode(),
            initial.spec.mode()
        )));
    }
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    train.check_against(&initial)?;
    if alg == Algorithm::Rr {
        check_ridge_budget(&initial)?;
    }
    let metric_loss = if alg == Algorithm::Rr {
        LossKind::SquaredError
    } else {
        cfg.loss
    };

    let mut metrics = Vec::new();
    let record = |w: &Weights, epoch: usize, elapsed: f64, out: &mut Vec<EpochMetrics>| -> Result<()> {
        for (name, set) in std::iter::once(("train", train)).chain(eval.iter().copied()) {
            let (loss, error_rate) = evaluate(w, set, metric_loss)?;
            out.push(EpochMetrics {
                epoch,
                split: name.to_string(),
                loss,
                error_rate,
                wall_time_s: elapsed,
            });
        }
        Ok(())
    };
    record(&initial, 0, 0.0, &mut metrics)?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { weights: initial, metrics });
    }

    if alg == Algorithm::Rr {
        let start = Instant::now();
        let w = ridge_fit(&initial, train, cfg.ridge_lambda)?;
        record(&w, 1, start.elapsed().as_secs_f64(), &mut metrics)?;
        return Ok(TrainOutcome { weights: w, metrics });
    }

    let mut w = initial;
    let mut state = MomentumState::new(&w);
    let params = cfg.sgd();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut elapsed = 0.0;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, mut g) = batch_gradient(&w, train, batch, alg, cfg.loss)?;
            g.scale(1.0 / batch.len() as f64);
            sgd_step(&mut w, &g, &mut state, &params)?;
        }
        if let Some(index) = w.tensors().flat_map(|t| t.data()).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index }.in_stage(format!("epoch {epoch}")));
        }
        elapsed += start.elapsed().as_secs_f64();
        record(&w, epoch, elapsed, &mut metrics)?;
    }
    Ok(TrainOutcome { weights: w, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_weights, NetworkSpec};

    fn toy_set() -> LabeledSet {
        let inputs: Vec<Vec<f64>> = (0..40)
            .map(|k| {
                let t = k as f64 * 0.37;
                vec![t.sin(), t.cos(), 1.0]
            })
            .collect();
        let labels = inputs.iter().map(|x| usize::from(x[0] > 0.0)).collect();
        LabeledSet::new(inputs, labels).unwrap()
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("sgd".parse::<Algorithm>().is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let spec = NetworkSpec::new(vec![3, 4], Mode::Ss, 2).unwrap();
        let w = init_weights(&spec, 0.5, 3).unwrap();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let out = train(w.clone(), &toy_set(), &[], &cfg, Algorithm::SsBp).unwrap();
        assert_eq!(out.weights, w);
        assert_eq!(out.metrics.len(), 1);
        assert_eq!(out.metrics[0].epoch, 0);
    }

    #[test]
    fn mode_mismatch_and_deep_ridge_rejected() {
        let spec = NetworkSpec::new(vec![3, 4], Mode::Ss, 2).unwrap();
        let w = init_weights(&spec, 0.5, 3).unwrap();
        let cfg = TrainConfig::default();
        assert!(train(w, &toy_set(), &[], &cfg, Algorithm::Lrc).is_err());

        let spec = NetworkSpec::new(vec![3, 2, 2], Mode::Ts, 2).unwrap();
        let w = init_weights(&spec, 0.5, 3).unwrap();
        assert!(train(w, &toy_set(), &[], &cfg, Algorithm::Rr).is_err());
    }

    #[test]
    fn empty_training_set_rejected() {
        let spec = NetworkSpec::new(vec![3, 4], Mode::Ss, 2).unwrap();
        let w = init_weights(&spec, 0.5, 3).unwrap();
        let err = train(w, &LabeledSet::default(), &[], &TrainConfig::default(), Algorithm::SsBp);
        assert!(err.is_err());
    }

    #[test]
    fn ridge_reports_epochs_zero_and_one() {
        let spec = NetworkSpec::new(vec![3, 8], Mode::Ts, 2).unwrap();
        let w = init_weights(&spec, 1.0, 5).unwrap();
        let set = toy_set();
        let cfg = TrainConfig { epochs: 7, ridge_lambda: 1e-3, ..Default::default() };
        let out = train(w, &set, &[("val", &set)], &cfg, Algorithm::Rr).unwrap();
        let epochs: Vec<usize> = out.metrics.iter().map(|m| m.epoch).collect();
        assert_eq!(epochs, vec![0, 0, 1, 1]);
        assert!(out.metrics[2].loss < out.metrics[0].loss);
    }

    #[test]
    fn same_seed_same_weights() {
        let spec = NetworkSpec::new(vec![3, 6, 4], Mode::TsLrc, 2).unwrap();
        let w = init_weights(&spec, 0.5, 3).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 7, learning_rate: 0.05, ..Default::default() };
        let a = train(w.clone(), &toy_set(), &[], &cfg, Algorithm::IbpLrc).unwrap();
        let b = train(w, &toy_set(), &[], &cfg, Algorithm::IbpLrc).unwrap();
        assert_eq!(a.weights, b.weights);
    }
}
