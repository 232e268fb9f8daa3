//! SGD with classical (heavy-ball) momentum and the cosine learning-rate
//! schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::mlp::{Mlp, MlpGradients};

/// One momentum-SGD update on a flat parameter slice:
/// `v <- m*v + g; p <- p - lr*v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    momentum: f64,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Config(format!(
            "sgd shapes disagree: {} params, {} grads, {} velocity",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence("non-finite gradient in sgd step".into()));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Cosine decay from `lr0` at step 0 to exactly 0 at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("cosine schedule needs total_steps >= 1".into()));
    }
    if step > total_steps {
        return Err(Error::Range(format!(
            "schedule step {step} exceeds total_steps {total_steps}"
        )));
    }
    let frac = step as f64 / total_steps as f64;
    Ok(lr0 * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant { lr: f64 },
    Cosine { lr0: f64, total_steps: usize },
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> Result<f64> {
        match *self {
            LrSchedule::Constant { lr } => Ok(lr),
            LrSchedule::Cosine { lr0, total_steps } => {
                // Clamp so open-ended training can keep stepping at lr 0.
                cosine_lr(step.min(total_steps), total_steps, lr0)
            }
        }
    }
}

/// Momentum-SGD state for one network: velocity buffers mirroring the
/// parameter shapes.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    momentum: f64,
    velocity: MlpGradients,
}

impl OptimizerState {
    pub fn new(momentum: f64, net: &Mlp) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0,1), got {momentum}"
            )));
        }
        Ok(Self {
            momentum,
            velocity: MlpGradients::zeros_like(net),
        })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    /// Applies one update to `net` in place.
    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGradients, lr: f64) -> Result<()> {
        if grads.layers.len() != self.velocity.layers.len()
            || grads.layers.len() != net.layers().len()
        {
            return Err(Error::Invariant(
                "gradient shape does not match optimizer state".into(),
            ));
        }
        for ((layer, lg), lv) in net
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.velocity.layers.iter_mut())
        {
            for ((row, g_row), v_row) in layer
                .weights
                .iter_mut()
                .zip(&lg.d_weights)
                .zip(lv.d_weights.iter_mut())
            {
                sgd_step(row, g_row, v_row, self.momentum, lr)?;
            }
            sgd_step(&mut layer.bias, &lg.d_bias, &mut lv.d_bias, self.momentum, lr)?;
        }
        Ok(())
    }
}
