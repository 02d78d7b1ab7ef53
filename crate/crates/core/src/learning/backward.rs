//! Gradients and pseudo gradients for every training algorithm.
//!
//! * [`ss_backward`]: ordinary backpropagation through an SS network.
//! * [`ibp_backward`]: exact `W_Z` gradient plus inverted-backpropagation pseudo
//!   gradients for the activation weights, which the Heaviside switch
//!   otherwise leaves without a gradient.
//! * [`lrc_backward`]: backpropagation through rotation-compression layers with
//!   the masks held constant; `W_l` gets nothing unless combined with IBP.

use crate::error::{Error, Result};
use crate::network::{active_blocks, auxiliary_chain, Mode, Weights};
use crate::network::ForwardTrace;
use crate::tensor::{dot, DenseTensor};

/// One gradient tensor per weight tensor, in the same layout as [`Weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub activation: Vec<DenseTensor>,
    pub rotation: Vec<DenseTensor>,
    pub analysis: Option<DenseTensor>,
    pub readout: Option<DenseTensor>,
}

impl GradientSet {
    pub fn zeros_like(w: &Weights) -> Self {
        let z = |t: &DenseTensor| DenseTensor::zeros(t.shape());
        Self {
            activation: w.activation.iter().map(z).collect(),
            rotation: w.rotation.iter().map(z).collect(),
            analysis: w.analysis.as_ref().map(z),
            readout: w.readout.as_ref().map(z),
        }
    }

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

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().map(DenseTensor::max_abs).fold(0.0, f64::max)
    }
}

/// `m += a (x) b` for a matrix `m` of shape `(a.len(), b.len())`.
fn add_outer(m: &mut DenseTensor, a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (row, &ar) in m.data_mut().chunks_exact_mut(cols).zip(a) {
        if ar != 0.0 {
            row.iter_mut().zip(b).for_each(|(r, &bv)| *r += ar * bv);
        }
    }
}

/// `m' v` for a matrix `m`.
fn transpose_matvec(m: &DenseTensor, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for (r, &vr) in v.iter().enumerate() {
        if vr != 0.0 {
            out.iter_mut()
                .zip(m.row(r))
                .for_each(|(o, &mv)| *o += vr * mv);
        }
    }
    out
}

fn check_scores(w: &Weights, g_out: &[f64]) -> Result<()> {
    if g_out.len() != w.spec.classes() {
        return Err(Error::shape(format!(
            "{} score gradients for {} classes",
            g_out.len(),
            w.spec.classes()
        )));
    }
    Ok(())
}

/// Backpropagation through an SS network.
pub fn ss_backward(trace: &ForwardTrace, w: &Weights, g_out: &[f64]) -> Result<GradientSet> {
    let mut grads = GradientSet::zeros_like(w);
    ss_backward_into(trace, w, g_out, &mut grads)?;
    Ok(grads)
}

pub(crate) fn ss_backward_into(
    trace: &ForwardTrace,
    w: &Weights,
    g_out: &[f64],
    grads: &mut GradientSet,
) -> Result<()> {
    check_scores(w, g_out)?;
    let wx = w
        .readout
        .as_ref()
        .ok_or_else(|| Error::invalid("SS backward needs readout weights"))?;
    if trace.masks.len() != w.depth() {
        return Err(Error::shape("trace depth does not match the weights"));
    }
    add_outer(grads.readout.as_mut().expect("readout"), g_out, trace.x_last());
    let mut delta = transpose_matvec(wx, g_out);
    for l in (0..w.depth()).rev() {
        delta
            .iter_mut()
            .zip(&trace.masks[l])
            .for_each(|(d, &on)| if !on { *d = 0.0 });
        add_outer(&mut grads.activation[l], &delta, &trace.xs[l]);
        if l > 0 {
            delta = transpose_matvec(&w.activation[l], &delta);
        }
    }
    Ok(())
}

fn row_norms_sq(w: &DenseTensor) -> Vec<f64> {
    (0..w.rows()).map(|j| dot(w.row(j), w.row(j))).collect()
}

/// Row-vector product `g J^+` for the contraction Jacobian `J = dA_k/dA_{k-1}`.
///
/// `g` has the shape of `A_{k-1}`, the result the shape of `A_k`:
/// `out[.., j] = sum_i g[.., j, i] W[j, i] / ||W[j, :]||^2`. Rows with zero
/// norm contribute zero, the pseudoinverse of a zero block.
pub fn inverted_step(g: &DenseTensor, w: &DenseTensor) -> Result<DenseTensor> {
    let scaled = pinv_rows(w);
    crate::tensor::contract(g, &scaled)
}

/// Column-vector product `J^+ g`: maps an `A_k`-shaped `g` to the shape of
/// `A_{k-1}` with `out[.., j, i] = g[.., j] W[j, i] / ||W[j, :]||^2`.
pub fn pinv_apply(g: &DenseTensor, w: &DenseTensor) -> Result<DenseTensor> {
    let rows = w.rows();
    if g.shape().last() != Some(&rows) {
        return Err(Error::shape(format!(
            "last axis of {:?} must match {rows} rows",
            g.shape()
        )));
    }
    let scaled = pinv_rows(w);
    let cols = w.cols();
    let mut shape = g.shape().to_vec();
    shape.push(cols);
    let mut data = Vec::with_capacity(g.len() * cols);
    for (k, &gv) in g.data().iter().enumerate() {
        data.extend(scaled.row(k % rows).iter().map(|&s| gv * s));
    }
    DenseTensor::new(shape, data)
}

/// `W[j, :] / ||W[j, :]||^2`, zero for zero rows.
fn pinv_rows(w: &DenseTensor) -> DenseTensor {
    let norms = row_norms_sq(w);
    let cols = w.cols();
    let mut out = w.clone();
    for (row, &n) in out.data_mut().chunks_exact_mut(cols).zip(&norms) {
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        } else {
            row.fill(0.0);
        }
    }
    out
}

/// Gradient of `A_l = A_{l-1} (-) W_l` with respect to `W_l`, contracted with
/// an upstream `A_l`-shaped gradient: `sum_lead g[lead, j] A_{l-1}[lead, j, i]`.
fn contraction_weight_grad(g: &DenseTensor, a_prev: &DenseTensor, out: &mut DenseTensor) {
    let (rows, cols) = (out.rows(), out.cols());
    let acc = out.data_mut();
    for (k, (&gv, block)) in g.data().iter().zip(a_prev.data().chunks_exact(cols)).enumerate() {
        if gv != 0.0 {
            let j = k % rows;
            acc[j * cols..(j + 1) * cols]
                .iter_mut()
                .zip(block)
                .for_each(|(o, &a)| *o += gv * a);
        }
    }
}

/// Inverted backpropagation for a TS network.
///
/// The `W_Z` gradient is exact. For layer `l` the pseudo gradient is
/// `dL/dA_0 (dA_1/dA_0)^+ .. (dA_l/dA_{l-1})^+ dA_l/dW_l`.
pub fn ibp_backward(trace: &ForwardTrace, w: &Weights, g_out: &[f64]) -> Result<GradientSet> {
    let mut grads = GradientSet::zeros_like(w);
    ibp_backward_into(trace, w, g_out, &mut grads)?;
    Ok(grads)
}

pub(crate) fn ibp_backward_into(
    trace: &ForwardTrace,
    w: &Weights,
    g_out: &[f64],
    grads: &mut GradientSet,
) -> Result<()> {
    check_scores(w, g_out)?;
    if w.spec.mode() != Mode::Ts {
        return Err(Error::invalid("inverted backpropagation needs TS weights"));
    }
    let wz = w.analysis.as_ref().expect("TS weights carry W_Z");
    let z = trace
        .z_last()
        .ok_or_else(|| Error::invalid("trace has no expanded representation Z_L"))?;

    // exact readout gradient g (x) vec(Z_L), touching only the active blocks
    let x0 = &trace.xs[0];
    let n0 = x0.len();
    let blocks = active_blocks(&trace.masks);
    let gz = grads.analysis.as_mut().expect("analysis gradient");
    let dcols = gz.cols();
    for (r, &gr) in g_out.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        let row = &mut gz.data_mut()[r * dcols..(r + 1) * dcols];
        for &b in &blocks {
            row[b * n0..(b + 1) * n0]
                .iter_mut()
                .zip(x0)
                .for_each(|(o, &x)| *o += gr * x);
        }
    }

    let owned_chain;
    let chain = match &trace.auxiliary {
        Some(c) => c,
        None => {
            owned_chain = auxiliary_chain(trace, w)?;
            &owned_chain
        }
    };
    // dL/dA_0 = W_Z' g, shaped like Z_L
    let mut g = DenseTensor::new(z.shape().to_vec(), transpose_matvec(wz, g_out))?;
    for (l, wl) in w.activation.iter().enumerate() {
        g = inverted_step(&g, wl)?;
        contraction_weight_grad(&g, &chain[l], &mut grads.activation[l]);
    }
    Ok(())
}

/// Backpropagation through rotation-compression layers. Masks are treated as
/// constants, so the activation weights receive no gradient.
pub fn lrc_backward(trace: &ForwardTrace, w: &Weights, g_out: &[f64]) -> Result<GradientSet> {
    let mut grads = GradientSet::zeros_like(w);
    lrc_backward_into(trace, w, g_out, false, &mut grads)?;
    Ok(grads)
}

/// [`lrc_backward`] plus one-layer inverted-backpropagation pseudo gradients
/// for each `W_l`, treating `X_{l-1} (+) W_l` as a single-layer TS block.
pub fn ibp_lrc_backward(trace: &ForwardTrace, w: &Weights, g_out: &[f64]) -> Result<GradientSet> {
    let mut grads = GradientSet::zeros_like(w);
    lrc_backward_into(trace, w, g_out, true, &mut grads)?;
    Ok(grads)
}

pub(crate) fn lrc_backward_into(
    trace: &ForwardTrace,
    w: &Weights,
    g_out: &[f64],
    with_ibp: bool,
    grads: &mut GradientSet,
) -> Result<()> {
    check_scores(w, g_out)?;
    if w.spec.mode() != Mode::TsLrc {
        return Err(Error::invalid("LRC backward needs TS-LRC weights"));
    }
    if trace.expanded.len() != w.depth() {
        return Err(Error::invalid(
            "LRC backward needs the expanded blocks retained by the forward pass",
        ));
    }
    let wx = w.readout.as_ref().expect("LRC weights carry W_X");
    add_outer(grads.readout.as_mut().expect("readout"), g_out, trace.x_last());
    let mut g = transpose_matvec(wx, g_out);
    for l in (0..w.depth()).rev() {
        let rot = &w.rotation[l];
        let mask = &trace.masks[l];
        let x_prev = &trace.xs[l];
        let d = x_prev.len();
        add_outer_blocks(&mut grads.rotation[l], &g, mask, x_prev);
        if with_ibp {
            let wl = &w.activation[l];
            let norms = row_norms_sq(wl);
            let g_expanded = transpose_matvec(rot, &g);
            let ga = &mut grads.activation[l];
            for (j, &on) in mask.iter().enumerate() {
                if !on || norms[j] == 0.0 {
                    continue;
                }
                let g_unit = dot(&g_expanded[j * d..(j + 1) * d], wl.row(j)) / norms[j];
                ga.data_mut()[j * d..(j + 1) * d]
                    .iter_mut()
                    .zip(x_prev)
                    .for_each(|(o, &x)| *o += g_unit * x);
            }
        }
        if l > 0 {
            g = input_grad(rot, &g, mask, d);
        }
    }
    Ok(())
}

/// `m += g (x) vec(x (+) W)` writing only the active blocks.
fn add_outer_blocks(m: &mut DenseTensor, g: &[f64], mask: &[bool], x: &[f64]) {
    let cols = m.cols();
    let d = x.len();
    for (row, &gr) in m.data_mut().chunks_exact_mut(cols).zip(g) {
        if gr == 0.0 {
            continue;
        }
        for (j, &on) in mask.iter().enumerate() {
            if on {
                row[j * d..(j + 1) * d]
                    .iter_mut()
                    .zip(x)
                    .for_each(|(o, &xv)| *o += gr * xv);
            }
        }
    }
}

/// `sum_j h_j (block j of W*)' g`.
fn input_grad(rot: &DenseTensor, g: &[f64], mask: &[bool], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        let row = rot.row(r);
        for (j, &on) in mask.iter().enumerate() {
            if on {
                out.iter_mut()
                    .zip(&row[j * d..(j + 1) * d])
                    .for_each(|(o, &v)| *o += gr * v);
            }
        }
    }
    out
}

/// Input gradient of the top LRC layer stack, exposed for structural tests.
pub fn lrc_input_gradient(trace: &ForwardTrace, w: &Weights, layer: usize, g: &[f64]) -> Vec<f64> {
    input_grad(&w.rotation[layer], g, &trace.masks[layer], trace.xs[layer].len())
}
