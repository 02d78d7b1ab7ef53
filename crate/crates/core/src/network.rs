//! Scalar switching (SS) and tensor switching (TS) networks.
//!
//! An SS network is an ordinary bias-free ReLU MLP. A TS network makes the same
//! switching decisions but, instead of contracting each layer back to a vector,
//! keeps copying the whole lower-layer tensor into the slot of every active
//! unit, so `Z_L` has shape `(n_L, ..., n_1, n_0)`. The LRC variant flattens a
//! one-layer expansion and projects it with a learned matrix `W*_l`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, dot, is_active, DenseTensor};

pub mod io;

/// Default cap on the number of scalars in a TS expanded representation.
pub const DEFAULT_MEMORY_BUDGET: u128 = 200_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Standard ReLU network with readout `W_X`.
    Ss,
    /// Tensor switching network with analysis weights `W_Z` on `vec(Z_L)`.
    Ts,
    /// Tensor switching with linear rotation-compression layers.
    TsLrc,
}

impl Mode {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Mode::Ss => 0,
            Mode::Ts => 1,
            Mode::TsLrc => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Mode::Ss),
            1 => Some(Mode::Ts),
            2 => Some(Mode::TsLrc),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ss => "ss",
            Mode::Ts => "ts",
            Mode::TsLrc => "ts-lrc",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ss" => Ok(Mode::Ss),
            "ts" => Ok(Mode::Ts),
            "ts-lrc" | "lrc" => Ok(Mode::TsLrc),
            other => Err(Error::invalid(format!("unknown network mode `{other}`"))),
        }
    }
}

/// Architecture of a bias-free switching network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    widths: Vec<usize>,
    mode: Mode,
    rotation_widths: Vec<usize>,
    classes: usize,
    memory_budget: u128,
}

impl NetworkSpec {
    /// `widths` lists `n_0..n_L`. Rotation widths default to `n*_l = n_l`.
    pub fn new(widths: Vec<usize>, mode: Mode, classes: usize) -> Result<Self> {
        let rotation_widths = widths.iter().skip(1).copied().collect();
        Self::build(widths, mode, rotation_widths, classes, DEFAULT_MEMORY_BUDGET)
    }

    pub fn with_rotation_widths(self, rotation_widths: Vec<usize>) -> Result<Self> {
        Self::build(
            self.widths,
            self.mode,
            rotation_widths,
            self.classes,
            self.memory_budget,
        )
    }

    pub fn with_memory_budget(self, budget: u128) -> Result<Self> {
        Self::build(
            self.widths,
            self.mode,
            self.rotation_widths,
            self.classes,
            budget,
        )
    }

    fn build(
        widths: Vec<usize>,
        mode: Mode,
        rotation_widths: Vec<usize>,
        classes: usize,
        memory_budget: u128,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("a network needs at least one hidden layer"));
        }
        if widths.contains(&0) {
            return Err(Error::invalid(format!("widths must be positive: {widths:?}")));
        }
        if classes == 0 {
            return Err(Error::invalid("at least one output class is required"));
        }
        if rotation_widths.len() != widths.len() - 1 {
            return Err(Error::invalid(format!(
                "expected {} rotation widths, got {}",
                widths.len() - 1,
                rotation_widths.len()
            )));
        }
        if rotation_widths.contains(&0) {
            return Err(Error::invalid("rotation widths must be at least 1"));
        }
        let spec = Self {
            widths,
            mode,
            rotation_widths,
            classes,
            memory_budget,
        };
        let required = spec.largest_representation();
        if required > memory_budget {
            return Err(Error::MemoryBudget {
                required,
                budget: memory_budget,
            });
        }
        Ok(spec)
    }

    /// Largest per-example representation the forward pass materializes.
    fn largest_representation(&self) -> u128 {
        match self.mode {
            Mode::Ss => self.widths.iter().map(|&n| n as u128).max().unwrap_or(0),
            Mode::Ts => self.widths.iter().map(|&n| n as u128).product(),
            Mode::TsLrc => (1..=self.depth())
                .map(|l| (self.widths[l] * self.layer_input_dim(l)) as u128)
                .max()
                .unwrap_or(0),
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn rotation_widths(&self) -> &[usize] {
        &self.rotation_widths
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn memory_budget(&self) -> u128 {
        self.memory_budget
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    /// Length of the vector entering layer `l` (1-based). In LRC mode this is
    /// the rotation width of the layer below.
    pub fn layer_input_dim(&self, l: usize) -> usize {
        match (self.mode, l) {
            (Mode::TsLrc, l) if l > 1 => self.rotation_widths[l - 2],
            _ => self.widths[l - 1],
        }
    }

    /// `prod_l n_l`, the length of `vec(Z_L)`.
    pub fn expanded_len(&self) -> usize {
        self.widths.iter().product()
    }

    /// Length of the vector seen by the readout `W_X`.
    pub fn readout_dim(&self) -> usize {
        match self.mode {
            Mode::TsLrc => self.rotation_widths[self.depth() - 1],
            _ => self.widths[self.depth()],
        }
    }

    pub(crate) fn with_mode_unchecked(&self, mode: Mode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }
}

/// All weight tensors of one network. Which optional parts are present is
/// fixed by the mode: SS has `readout`, TS has `analysis`, LRC has `rotation`
/// and `readout`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub spec: NetworkSpec,
    /// `W_l`, shape `(n_l, d_{l-1})`.
    pub activation: Vec<DenseTensor>,
    /// `W*_l`, shape `(n*_l, n_l * d_{l-1})`; empty outside LRC mode.
    pub rotation: Vec<DenseTensor>,
    /// `W_Z`, shape `(m, prod_l n_l)`.
    pub analysis: Option<DenseTensor>,
    /// `W_X`, shape `(m, n_L)` or `(m, n*_L)`.
    pub readout: Option<DenseTensor>,
}

type Shapes = (Vec<[usize; 2]>, Vec<[usize; 2]>, Option<[usize; 2]>, Option<[usize; 2]>);

/// Shapes of the activation, rotation, analysis and readout tensors.
fn expected_shapes(spec: &NetworkSpec) -> Shapes {
    let depth = spec.depth();
    let activation = (1..=depth)
        .map(|l| [spec.widths[l], spec.layer_input_dim(l)])
        .collect();
    let rotation = if spec.mode == Mode::TsLrc {
        (1..=depth)
            .map(|l| [spec.rotation_widths[l - 1], spec.widths[l] * spec.layer_input_dim(l)])
            .collect()
    } else {
        Vec::new()
    };
    let analysis = (spec.mode == Mode::Ts).then(|| [spec.classes, spec.expanded_len()]);
    let readout = (spec.mode != Mode::Ts).then(|| [spec.classes, spec.readout_dim()]);
    (activation, rotation, analysis, readout)
}

impl Weights {
    /// Checks every tensor against the shapes implied by `spec`.
    pub fn validate(&self) -> Result<()> {
        let (act, rot, ana, read) = expected_shapes(&self.spec);
        let check = |name: &str, t: &DenseTensor, s: &[usize; 2]| -> Result<()> {
            if t.shape() != s {
                return Err(Error::shape(format!(
                    "{name} has shape {:?}, expected {s:?}",
                    t.shape()
                )));
            }
            Ok(())
        };
        if self.activation.len() != act.len() || self.rotation.len() != rot.len() {
            return Err(Error::shape("layer count does not match the network layout"));
        }
        for (l, (t, s)) in self.activation.iter().zip(&act).enumerate() {
            check(&format!("W_{}", l + 1), t, s)?;
        }
        for (l, (t, s)) in self.rotation.iter().zip(&rot).enumerate() {
            check(&format!("W*_{}", l + 1), t, s)?;
        }
        match (&self.analysis, &ana) {
            (Some(t), Some(s)) => check("W_Z", t, s)?,
            (None, None) => {}
            _ => return Err(Error::shape("analysis weights present/absent contrary to mode")),
        }
        match (&self.readout, &read) {
            (Some(t), Some(s)) => check("W_X", t, s)?,
            (None, None) => {}
            _ => return Err(Error::shape("readout weights present/absent contrary to mode")),
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.spec.depth()
    }

    /// Every tensor in a fixed order: activation, rotation, analysis, readout.
    pub fn tensors(&self) -> impl Iterator<Item = &DenseTensor> {
        self.activation
            .iter()
            .chain(&self.rotation)
            .chain(&self.analysis)
            .chain(&self.readout)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut DenseTensor> {
        self.activation
            .iter_mut()
            .chain(&mut self.rotation)
            .chain(&mut self.analysis)
            .chain(&mut self.readout)
    }

    /// Turns SS weights into TS weights that carry the given analysis matrix.
    pub fn into_ts(self, analysis: DenseTensor) -> Result<Self> {
        let w = Weights {
            spec: self.spec.with_mode_unchecked(Mode::Ts),
            activation: self.activation,
            rotation: Vec::new(),
            analysis: Some(analysis),
            readout: None,
        };
        // re-run the budget check for the new mode
        NetworkSpec::build(
            w.spec.widths.clone(),
            Mode::Ts,
            w.spec.rotation_widths.clone(),
            w.spec.classes,
            w.spec.memory_budget,
        )?;
        w.validate()?;
        Ok(w)
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, shape: [usize; 2], sigma: f64) -> DenseTensor {
    let data = (0..shape[0] * shape[1])
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    DenseTensor::from_parts(shape.to_vec(), data)
}

fn init_with(spec: &NetworkSpec, seed: u64, sigma_for: impl Fn(&[usize; 2]) -> f64) -> Weights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (act, rot, ana, read) = expected_shapes(spec);
    let mut draw = |s: [usize; 2]| {
        let sigma = sigma_for(&s);
        gaussian_matrix(&mut rng, s, sigma)
    };
    let activation = act.into_iter().map(&mut draw).collect();
    let rotation = rot.into_iter().map(&mut draw).collect();
    let analysis = ana.map(&mut draw);
    let readout = read.map(&mut draw);
    Weights {
        spec: spec.clone(),
        activation,
        rotation,
        analysis,
        readout,
    }
}

/// Draws every weight i.i.d. from `N(0, sigma^2)` using a ChaCha8 stream
/// seeded by `seed`.
pub fn init_weights(spec: &NetworkSpec, sigma: f64, seed: u64) -> Result<Weights> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    Ok(init_with(spec, seed, |_| sigma))
}

/// Like [`init_weights`] but each matrix uses `sigma = gain / sqrt(fan_in)`.
pub fn init_weights_fan_in(spec: &NetworkSpec, gain: f64, seed: u64) -> Result<Weights> {
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(Error::invalid(format!("gain must be positive, got {gain}")));
    }
    Ok(init_with(spec, seed, |s| gain / (s[1] as f64).sqrt()))
}

/// Per-example record of a forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    /// `X_0..X_L`. In LRC mode `X_l` is the rotated output of layer `l`.
    pub xs: Vec<Vec<f64>>,
    /// Pre-activations `W_l X_{l-1}` for `l = 1..L`.
    pub pre_activations: Vec<Vec<f64>>,
    /// Activation masks `H(W_l X_{l-1})` for `l = 1..L`.
    pub masks: Vec<Vec<bool>>,
    /// `Z_0..Z_L` (TS mode only).
    pub zs: Vec<DenseTensor>,
    /// `A_0..A_L`, filled by [`ForwardTrace::populate_auxiliary`].
    pub auxiliary: Option<Vec<DenseTensor>>,
    /// `vec(X_{l-1} (+) W_l)` per layer, kept by LRC passes that request it.
    pub expanded: Vec<Vec<f64>>,
    /// Readout scores, length `m`.
    pub output: Vec<f64>,
}

impl ForwardTrace {
    pub fn z_last(&self) -> Option<&DenseTensor> {
        self.zs.last()
    }

    pub fn x_last(&self) -> &[f64] {
        self.xs.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn populate_auxiliary(&mut self, w: &Weights) -> Result<()> {
        self.auxiliary = Some(auxiliary_chain(self, w)?);
        Ok(())
    }

    /// Smallest `|W_l X_{l-1}|` over all units; distance from a switching boundary.
    pub fn boundary_margin(&self) -> f64 {
        self.pre_activations
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

fn check_input(w: &Weights, x0: &[f64]) -> Result<()> {
    if x0.len() != w.spec.input_dim() {
        return Err(Error::shape(format!(
            "input has length {}, network expects {}",
            x0.len(),
            w.spec.input_dim()
        )));
    }
    Ok(())
}

fn switch_layer(wl: &DenseTensor, x: &[f64]) -> Result<(Vec<f64>, Vec<bool>)> {
    let pre = wl.matvec(x)?;
    let mask = pre.iter().map(|&v| is_active(v)).collect();
    Ok((pre, mask))
}

fn readout(m: Option<&DenseTensor>, v: &[f64]) -> Result<Vec<f64>> {
    m.map_or(Ok(Vec::new()), |m| m.matvec(v))
}

/// SS forward pass: `X_l = max(0, W_l X_{l-1})`, scores `W_X X_L`.
pub fn ss_forward(w: &Weights, x0: &[f64]) -> Result<ForwardTrace> {
    check_input(w, x0)?;
    let mut trace = ForwardTrace {
        xs: vec![x0.to_vec()],
        ..Default::default()
    };
    for wl in &w.activation {
        let (pre, mask) = switch_layer(wl, trace.x_last())?;
        let x = pre.iter().map(|&v| if is_active(v) { v } else { 0.0 }).collect();
        trace.pre_activations.push(pre);
        trace.masks.push(mask);
        trace.xs.push(x);
    }
    trace.output = readout(w.readout.as_ref(), trace.x_last())?;
    Ok(trace)
}

/// TS forward pass: `Z_l = H(W_l X_{l-1}) (x) Z_{l-1}` with `X` following the
/// SS recursion. Scores are `W_Z vec(Z_L)` when analysis weights are present.
pub fn ts_forward(w: &Weights, x0: &[f64]) -> Result<ForwardTrace> {
    check_input(w, x0)?;
    let required = w.spec.expanded_len() as u128;
    if required > w.spec.memory_budget() {
        return Err(Error::MemoryBudget {
            required,
            budget: w.spec.memory_budget(),
        });
    }
    let mut trace = ss_forward_without_readout(w, x0)?;
    let mut z = DenseTensor::vector(x0.to_vec())?;
    trace.zs.push(z.clone());
    for mask in &trace.masks {
        z = tensor::switch_copy(&z, mask);
        trace.zs.push(z.clone());
    }
    if let Some(wz) = &w.analysis {
        trace.output = analysis_readout(wz, &trace.masks, x0);
    }
    Ok(trace)
}

fn ss_forward_without_readout(w: &Weights, x0: &[f64]) -> Result<ForwardTrace> {
    let mut trace = ss_forward(w, x0)?;
    trace.output.clear();
    Ok(trace)
}

/// Flat indices of the `n_0`-blocks of `vec(Z_L)` that hold a copy of `X_0`,
/// i.e. chains of units active at every layer. Ascending order.
pub fn active_blocks(masks: &[Vec<bool>]) -> Vec<usize> {
    let mut blocks = vec![0usize];
    // Z_L's leading axis is the top layer, so walk from the top down.
    for mask in masks.iter().rev() {
        let n = mask.len();
        blocks = blocks
            .iter()
            .flat_map(|&b| {
                mask.iter()
                    .enumerate()
                    .filter(|(_, &on)| on)
                    .map(move |(k, _)| b * n + k)
            })
            .collect();
    }
    blocks
}

/// `W_Z vec(Z_L)` using only the active blocks.
pub(crate) fn analysis_readout(wz: &DenseTensor, masks: &[Vec<bool>], x0: &[f64]) -> Vec<f64> {
    let n0 = x0.len();
    let blocks = active_blocks(masks);
    (0..wz.rows())
        .map(|r| {
            let row = wz.row(r);
            blocks
                .iter()
                .map(|&b| dot(&row[b * n0..(b + 1) * n0], x0))
                .sum()
        })
        .collect()
}

/// Contracts `Z_L` successively against `W_1..W_L`, returning `A_0..A_L`.
/// `A_L` equals the SS activations `X_L`.
pub fn auxiliary_chain(trace: &ForwardTrace, w: &Weights) -> Result<Vec<DenseTensor>> {
    let z = trace
        .z_last()
        .ok_or_else(|| Error::invalid("trace has no expanded representation Z_L"))?;
    if trace.zs.len() != w.depth() + 1 {
        return Err(Error::shape("trace depth does not match the weights"));
    }
    let mut chain = Vec::with_capacity(w.depth() + 1);
    chain.push(z.clone());
    for wl in &w.activation {
        let next = tensor::contract(chain.last().expect("non-empty"), wl)?;
        chain.push(next);
    }
    Ok(chain)
}

/// Analysis weights `W_Z` that make a TS network reproduce the readout of the
/// SS network with the same activation weights.
///
/// Contraction is linear in `Z_L` with mask-independent coefficients, so
/// `X_L[k_L] = sum Z_L[k_L, .., k_1, i] * prod_l W_l[k_l, k_{l-1}]` and
/// `W_Z[r, (k_L, .., i)] = W_X[r, k_L] * prod_l W_l[k_l, k_{l-1}]`.
pub fn ts_emulate_ss(w: &Weights) -> Result<DenseTensor> {
    let wx = w
        .readout
        .as_ref()
        .ok_or_else(|| Error::invalid("SS readout W_X is required"))?;
    if w.spec.mode() == Mode::TsLrc {
        return Err(Error::invalid("rotation-compression weights have no TS equivalent"));
    }
    // coeff[k_l, rest] = prod of weights along the chain ending at unit k_l
    let mut coeff = w.activation[0].data().to_vec();
    let mut block = w.activation[0].cols();
    for wl in &w.activation[1..] {
        let (rows, cols) = (wl.rows(), wl.cols());
        let mut next = vec![0.0; rows * cols * block];
        for k in 0..rows {
            for j in 0..cols {
                let a = wl.row(k)[j];
                let dst = &mut next[(k * cols + j) * block..(k * cols + j + 1) * block];
                let src = &coeff[j * block..(j + 1) * block];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d = a * s);
            }
        }
        coeff = next;
        block *= cols;
    }
    let top = wx.cols();
    let mut data = Vec::with_capacity(wx.rows() * top * block);
    for r in 0..wx.rows() {
        for k in 0..top {
            let a = wx.row(r)[k];
            data.extend(coeff[k * block..(k + 1) * block].iter().map(|c| a * c));
        }
    }
    DenseTensor::matrix(wx.rows(), top * block, data)
}

/// LRC forward pass: `X_l = W*_l vec(X_{l-1} (+) W_l)`, scores `W_X X_L`.
///
/// With `retain_expanded` the flattened expansions are stored for the
/// backward pass.
pub fn lrc_forward(w: &Weights, x0: &[f64], retain_expanded: bool) -> Result<ForwardTrace> {
    check_input(w, x0)?;
    if w.spec.mode() != Mode::TsLrc {
        return Err(Error::invalid("lrc_forward needs TS-LRC weights"));
    }
    let mut trace = ForwardTrace {
        xs: vec![x0.to_vec()],
        ..Default::default()
    };
    for (wl, rot) in w.activation.iter().zip(&w.rotation) {
        let x = trace.x_last().to_vec();
        let (pre, mask) = switch_layer(wl, &x)?;
        let out = rotate_expanded(rot, &mask, &x);
        if retain_expanded {
            trace.expanded.push(flatten_expansion(&mask, &x));
        }
        trace.pre_activations.push(pre);
        trace.masks.push(mask);
        trace.xs.push(out);
    }
    trace.output = readout(w.readout.as_ref(), trace.x_last())?;
    Ok(trace)
}

fn flatten_expansion(mask: &[bool], x: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; mask.len() * x.len()];
    for (slot, &on) in e.chunks_exact_mut(x.len()).zip(mask) {
        if on {
            slot.copy_from_slice(x);
        }
    }
    e
}

/// `W* vec(x (+) W)` touching only the active blocks.
fn rotate_expanded(rot: &DenseTensor, mask: &[bool], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    (0..rot.rows())
        .map(|r| {
            let row = rot.row(r);
            mask.iter()
                .enumerate()
                .filter(|(_, &on)| on)
                .map(|(j, _)| dot(&row[j * d..(j + 1) * d], x))
                .sum()
        })
        .collect()
}

/// Forward pass dispatched on the weights' mode.
pub fn forward(w: &Weights, x0: &[f64], retain_expanded: bool) -> Result<ForwardTrace> {
    match w.spec.mode() {
        Mode::Ss => ss_forward(w, x0),
        Mode::Ts => ts_forward(w, x0),
        Mode::TsLrc => lrc_forward(w, x0, retain_expanded),
    }
}

/// Scores only, without materializing `Z_L` in TS mode.
pub fn predict(w: &Weights, x0: &[f64]) -> Result<Vec<f64>> {
    match w.spec.mode() {
        Mode::Ts => {
            check_input(w, x0)?;
            let trace = ss_forward_without_readout(w, x0)?;
            let wz = w
                .analysis
                .as_ref()
                .ok_or_else(|| Error::invalid("TS weights lack W_Z"))?;
            Ok(analysis_readout(wz, &trace.masks, x0))
        }
        _ => Ok(forward(w, x0, false)?.output),
    }
}
