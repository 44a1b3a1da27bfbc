use std::collections::BTreeMap;

use crate::tensor::{shape_err, ParamStore, Tensor, TensorError};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: ParamStore<f32>,
    pub second: ParamStore<f32>,
    /// Number of updates applied so far.
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore<f32>) -> Self {
        Self { first: params.zeros_like(), second: params.zeros_like(), step: 0 }
    }
}

/// Bias-corrected Adam followed by decoupled weight decay `p ← p − lr·wd·p`.
/// Accumulation runs in 64-bit per entry.
pub fn adam_step(
    params: &mut ParamStore<f32>,
    grads: &BTreeMap<String, Tensor<f32>>,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<(), TensorError> {
    for (name, p) in params.iter() {
        let g = grads.get(name).ok_or_else(|| TensorError::UnknownParam(name.clone()))?;
        if g.shape() != p.shape() {
            return Err(shape_err("adam", format!("{name}: gradient {:?} for {:?}", g.shape(), p.shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads[name].data();
        let m = state.first.get_mut(name)?.data_mut();
        let v = state.second.get_mut(name)?.data_mut();
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            let gk = g[k] as f64;
            let mk = ADAM_BETA1 * m[k] as f64 + (1.0 - ADAM_BETA1) * gk;
            let vk = ADAM_BETA2 * v[k] as f64 + (1.0 - ADAM_BETA2) * gk * gk;
            m[k] = mk as f32;
            v[k] = vk as f32;
            let update = lr * (mk / c1) / ((vk / c2).sqrt() + ADAM_EPS);
            let wk = *w as f64;
            *w = (wk - update - lr * weight_decay * wk) as f32;
        }
    }
    Ok(())
}

/// Exponential moving average of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Ema {
    pub decay: f64,
    pub shadow: ParamStore<f32>,
}

impl Ema {
    pub fn new(params: &ParamStore<f32>, decay: f64) -> Self {
        Self { decay, shadow: params.clone() }
    }

    /// `shadow ← decay·shadow + (1 − decay)·param`.
    pub fn update(&mut self, params: &ParamStore<f32>) -> Result<(), TensorError> {
        for (name, p) in params.iter() {
            let s = self.shadow.get_mut(name)?;
            if s.shape() != p.shape() {
                return Err(shape_err("ema", name.clone()));
            }
            for (sv, &pv) in s.data_mut().iter_mut().zip(p.data()) {
                *sv = (self.decay * *sv as f64 + (1.0 - self.decay) * pv as f64) as f32;
            }
        }
        Ok(())
    }
}
