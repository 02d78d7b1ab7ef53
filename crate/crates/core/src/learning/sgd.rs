use crate::error::{Error, Result};
use crate::learning::backward::GradientSet;
use crate::network::Weights;

/// Velocity buffers, one per weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    velocity: GradientSet,
}

impl MomentumState {
    pub fn new(w: &Weights) -> Self {
        Self {
            velocity: GradientSet::zeros_like(w),
        }
    }

    pub fn velocity(&self) -> &GradientSet {
        &self.velocity
    }
}

/// Step parameters shared by every gradient algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdParams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// `v <- mu v - eta (g + decay w)`, then `w <- w + v`, on every tensor.
pub fn sgd_step(
    w: &mut Weights,
    g: &GradientSet,
    state: &mut MomentumState,
    p: &SgdParams,
) -> Result<()> {
    let shapes_match = w
        .tensors()
        .zip(g.tensors())
        .zip(state.velocity.tensors())
        .all(|((a, b), c)| a.shape() == b.shape() && b.shape() == c.shape())
        && w.tensors().count() == g.tensors().count();
    if !shapes_match {
        return Err(Error::shape("gradient set does not mirror the weights"));
    }
    for ((wt, gt), vt) in w
        .tensors_mut()
        .zip(g.tensors())
        .zip(state.velocity.tensors_mut())
    {
        for ((wv, &gv), vv) in wt.data_mut().iter_mut().zip(gt.data()).zip(vt.data_mut()) {
            *vv = p.momentum * *vv - p.learning_rate * (gv + p.weight_decay * *wv);
            *wv += *vv;
        }
    }
    Ok(())
}
