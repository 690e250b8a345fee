use crate::error::{Error, Result};

use super::mlp::{Gradients, MlpWeights, Params};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Params<f64>,
    pub v: Params<f64>,
    pub step: u64,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            m: Params::zeros(),
            v: Params::zeros(),
            step: 0,
        }
    }
}

/// Bias-corrected ADAM update of one parameter buffer at (1-based) step `t`.
pub fn adam_update(params: &mut [f32], grads: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    debug_assert!(params.len() == grads.len() && m.len() == grads.len() && v.len() == grads.len());
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] = (params[i] as f64 - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps)) as f32;
    }
}

/// One optimizer step over every parameter tensor; increments the step counter.
pub fn adam_step(weights: &mut MlpWeights, state: &mut AdamState, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
    for (i, (p, g)) in weights.slices().iter().zip(grads.slices()).enumerate() {
        if p.len() != g.len() {
            return Err(Error::mismatch(
                format!("gradient {i} with {} values", p.len()),
                g.len(),
            ));
        }
    }
    state.step += 1;
    let t = state.step;
    let ws = weights.slices_mut();
    let ms = state.m.slices_mut();
    let vs = state.v.slices_mut();
    for (((p, g), m), v) in ws.into_iter().zip(grads.slices()).zip(ms).zip(vs) {
        adam_update(p, g, m, v, t, cfg);
    }
    Ok(())
}
