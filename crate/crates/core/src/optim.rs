//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: Real,
    pub weight_decay: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    m: Vec<Vec<Real>>,
    v: Vec<Vec<Real>>,
}

impl AdamWState {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self { step: 0, m, v }
    }

    pub fn for_tensors<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        Self::new(params.into_iter().map(Tensor::numel))
    }
}

/// A parameter tensor together with whether weight decay applies to it.
pub struct ParamSlot<'a> {
    pub tensor: &'a mut Tensor,
    pub decay: bool,
}

/// One update over all parameters from their accumulated gradients:
/// `θ ← θ − lr·(m̂/(√v̂ + eps) + wd·θ)`, decay applied only to slots marked `decay`.
pub fn adamw_step(params: &mut [ParamSlot<'_>], state: &mut AdamWState, cfg: &AdamWConfig) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "optimizer state holds {} tensors but {} were given",
            state.m.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (slot, (m, v)) in params.iter_mut().zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let decay = if slot.decay { cfg.weight_decay } else { 0.0 };
        let (theta, grad) = slot.tensor.data_and_grad_mut();
        let grad = grad.ok_or_else(|| Error::Contract("parameter has no gradient buffer".into()))?;
        if m.len() != theta.len() {
            return Err(Error::shape("adamw_step", &[m.len()], &[theta.len()]));
        }
        for i in 0..theta.len() {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + decay * theta[i]);
        }
    }
    Ok(())
}
