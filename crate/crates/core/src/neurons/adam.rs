use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient of every decaying parameter
    /// (`g + λ w`), i.e. the gradient of `λ/2 ‖w‖²`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[&Param]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update using the gradients stored in `params`.
pub fn adam_step(params: &mut [&mut Param], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::shape(
            "adam state",
            &[params.len()],
            &[state.m.len()],
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        if m.len() != p.value.len() {
            return Err(Error::shape("adam moment", &[p.value.len()], &[m.len()]));
        }
        let decay = if p.decay { cfg.weight_decay } else { 0.0 };
        let grads = p.grad.data().to_vec();
        for (j, w) in p.value.data_mut().iter_mut().enumerate() {
            let g = grads[j] + decay * *w;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            *w -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
