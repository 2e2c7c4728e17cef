//! Adam with bias correction and decoupled L2 weight decay.

use super::{Real, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub weight_decay: Real,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.0002, beta1: 0.9, beta2: 0.98, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// First/second moment estimates, index-aligned with the parameter list.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect(),
        }
    }
}

/// One optimizer step over index-aligned (params, grads). Decay is decoupled:
/// it scales the parameter directly instead of entering the moments.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    assert_eq!(params.len(), grads.len(), "params/grads length mismatch");
    assert_eq!(params.len(), state.m.len(), "params/state length mismatch");
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - (cfg.beta1 as f64).powf(t);
    let bc2 = 1.0 - (cfg.beta2 as f64).powf(t);
    for (idx, param) in params.iter_mut().enumerate() {
        let grad = &grads[idx];
        assert!(param.same_shape(grad), "grad shape mismatch at param {idx}");
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for i in 0..param.data.len() {
            let g = grad.data[i];
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g;
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m.data[i] as f64 / bc1;
            let v_hat = v.data[i] as f64 / bc2;
            let update = cfg.lr as f64 * m_hat / (v_hat.sqrt() + cfg.eps as f64);
            param.data[i] -= update as Real;
            if cfg.weight_decay != 0.0 {
                param.data[i] -= cfg.lr * cfg.weight_decay * param.data[i];
            }
        }
    }
}
