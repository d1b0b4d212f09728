//! AdamW with decoupled weight decay, plus the inverse-square-root
//! learning-rate schedule.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::params::ParamStore;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moment buffers, one pair per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> AdamState {
        let zeros = |_: usize| {
            (0..store.len())
                .map(|i| Array2::zeros(store.value(i).raw_dim()))
                .collect::<Vec<_>>()
        };
        AdamState {
            m: zeros(0),
            v: zeros(0),
            step: 0,
        }
    }
}

/// One bias-corrected AdamW step in place. Weight decay is decoupled:
/// `theta -= lr * wd * theta` independent of the gradient.
pub fn adamw_step(
    store: &mut ParamStore,
    grads: &[Array2<f64>],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::Input(format!(
            "gradient count {} does not match parameter count {}",
            grads.len(),
            store.len()
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for pid in 0..store.len() {
        let g = &grads[pid];
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient for parameter {}",
                store.name(pid)
            )));
        }
        let m = &mut state.m[pid];
        let v = &mut state.v[pid];
        ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        });
        ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        });
        let theta = store.value_mut(pid);
        ndarray::Zip::from(theta).and(&*m).and(&*v).for_each(|th, &m, &v| {
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            *th -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * *th);
        });
    }
    Ok(())
}

/// Inverse-sqrt schedule: `d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
pub fn lr_at(step: u64, warmup: u64, d_model: usize) -> Result<f64> {
    if step < 1 {
        return Err(Error::Input("lr schedule starts at step 1".into()));
    }
    let s = step as f64;
    let w = warmup as f64;
    Ok((d_model as f64).powf(-0.5) * (s.powf(-0.5)).min(s * w.powf(-1.5)))
}
