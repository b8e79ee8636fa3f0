use crate::model::ParamTensors;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments shaped like the learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamTensors,
    pub v: ParamTensors,
    pub t: u64,
}

impl AdamState {
    pub fn new(like: &ParamTensors) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }
}

/// One Adam update in place on a flat parameter vector; `t` is the step
/// number after incrementing (1 on the first call).
pub fn adam_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
) {
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= cfg.learning_rate * m_hat / (libm::sqrt(v_hat) + cfg.eps);
    }
}

pub fn adam_step(
    state: &mut AdamState,
    params: &mut ParamTensors,
    grads: &ParamTensors,
    cfg: &AdamConfig,
) {
    state.t += 1;
    let t = state.t;
    for (((theta, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        adam_update(theta, g, m, v, t, cfg);
    }
}
