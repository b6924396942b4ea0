use super::layer::Param;
use super::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// First and second moments per parameter tensor, in `params_mut` order.
#[derive(Debug, Clone, Default)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState {
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }
}

/// Bias-corrected Adam update: `w -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step<T: Scalar>(state: &mut AdamState<T>, params: &mut [&mut Param<T>], cfg: &AdamConfig) {
    if state.m.len() != params.len() {
        state.m = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        state.v = state.m.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (nb1, nb2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
    let (ic1, ic2) = (T::from_f64(1.0 / c1), T::from_f64(1.0 / c2));
    let (lr, eps) = (T::from_f64(cfg.lr), T::from_f64(cfg.eps));
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let Param { value, grad, .. } = &mut **p;
        for (((w, &g), mi), vi) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + nb1 * g;
            *vi = b2 * *vi + nb2 * g * g;
            let mh = *mi * ic1;
            let vh = *vi * ic2;
            *w = *w - lr * mh / (vh.sqrt() + eps);
        }
    }
}
