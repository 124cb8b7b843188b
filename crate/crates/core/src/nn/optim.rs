use crate::error::Result;

use super::params::ParamSet;
use super::tensor::Scalar;

/// `θ − lr·g`, returning a new set.
pub fn sgd_step<T: Scalar>(params: &ParamSet<T>, grads: &ParamSet<T>, lr: T) -> Result<ParamSet<T>> {
    params.zip_map(grads, "sgd_step", |p, g| p - lr * g)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamWConfig) -> Self {
        Self { config, step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }
}

/// Bias-corrected Adam with decoupled weight decay.
pub fn adamw_step<T: Scalar>(params: &ParamSet<T>, grads: &ParamSet<T>, state: &AdamWState<T>) -> Result<(ParamSet<T>, AdamWState<T>)> {
    params.check_aligned(grads, "adamw_step")?;
    params.check_aligned(&state.m, "adamw_step")?;
    let c = state.config;
    let step = state.step + 1;
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let bc1 = T::of(1.0 - c.beta1.powi(step as i32));
    let bc2 = T::of(1.0 - c.beta2.powi(step as i32));
    let (lr, eps, wd) = (T::of(c.lr), T::of(c.eps), T::of(c.weight_decay));
    let one = T::one();
    let mut out = params.clone();
    let mut m = state.m.clone();
    let mut v = state.v.clone();
    for (((p, g), m), v) in out.values_mut().zip(grads.values()).zip(m.values_mut()).zip(v.values_mut()) {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (one - b1) * gi;
            v.data[i] = b2 * v.data[i] + (one - b2) * gi * gi;
            let mhat = m.data[i] / bc1;
            let vhat = v.data[i] / bc2;
            let decayed = p.data[i] - lr * wd * p.data[i];
            p.data[i] = decayed - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok((out, AdamWState { config: c, step, m, v }))
}
