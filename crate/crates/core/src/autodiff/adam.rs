//! Adam with coupled L2 weight decay, plus the learning-rate schedule.

use super::Parameter;
use crate::error::{Error, Result};

/// First/second moment accumulators and hyperparameters for Adam.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 regularization strength added to gradients before moment updates.
    pub weight_decay: f64,
    first_moment: Vec<Vec<f32>>,
    second_moment: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &[Parameter], lr: f64, weight_decay: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update over all trainable parameters. A
/// non-finite gradient aborts the step before any parameter is touched.
pub fn adam_step(state: &mut AdamState, params: &mut [Parameter]) -> Result<()> {
    for p in params.iter() {
        if p.trainable && p.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::OptimizerAbort(format!(
                "non-finite gradient in parameter '{}'",
                p.name
            )));
        }
    }

    let t = state.step + 1;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);
    let (b1, b2) = (state.beta1 as f32, state.beta2 as f32);
    let wd = state.weight_decay as f32;
    let lr = state.lr;

    for (i, p) in params.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for c in 0..p.values.len() {
            let g = p.grad[c] + wd * p.values[c];
            m[c] = b1 * m[c] + (1.0 - b1) * g;
            v[c] = b2 * v[c] + (1.0 - b2) * g * g;
            let m_hat = m[c] as f64 / bc1;
            let v_hat = v[c] as f64 / bc2;
            p.values[c] -= (lr * m_hat / (v_hat.sqrt() + state.epsilon)) as f32;
        }
    }
    state.step = t;
    Ok(())
}

/// Learning rate interpolated geometrically from `start` at epoch 0 to
/// `end` at the final epoch.
pub fn lr_interp(epoch: usize, total_epochs: usize, start: f64, end: f64) -> f64 {
    if total_epochs <= 1 {
        return start;
    }
    let t = epoch as f64 / (total_epochs - 1) as f64;
    start * (end / start).powf(t)
}

/// The published schedule: 1e-4 at epoch 0 decaying to 1e-5 at the final
/// epoch, monotone nonincreasing.
pub fn lr_schedule(epoch: usize, total_epochs: usize) -> f64 {
    lr_interp(epoch, total_epochs, 1e-4, 1e-5)
}
