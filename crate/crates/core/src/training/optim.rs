use crate::network::{ModelConfig, ModelParams, Real};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments, shaped like the parameters they track.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub m: ModelParams<F>,
    pub v: ModelParams<F>,
    pub step: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            m: ModelParams::zeros(cfg),
            v: ModelParams::zeros(cfg),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<F: Real>(
    params: &mut ModelParams<F>,
    grads: &ModelParams<F>,
    state: &mut AdamState<F>,
    lr: f64,
) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (F::of(BETA1), F::of(BETA2));
    let c1 = F::of(1.0 - BETA1.powi(t));
    let c2 = F::of(1.0 - BETA2.powi(t));
    let lr = F::of(lr);
    let eps = F::of(EPSILON);
    let g = grads.tensors();
    let p = params.tensors_mut();
    let m = state.m.tensors_mut();
    let v = state.v.tensors_mut();
    for (((p, g), m), v) in p.into_iter().zip(g).zip(m).zip(v) {
        for (((p, &g), m), v) in p.iter_mut().zip(g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (F::one() - b1) * g;
            *v = b2 * *v + (F::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
