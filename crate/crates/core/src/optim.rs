//! Adam with bias correction.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-5,
        }
    }
}

/// First and second moment estimates, one array per store entry.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .entries()
            .iter()
            .map(|e| vec![0.0; e.value.len()])
            .collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One Adam update over every trainable entry of `store`.
///
/// Entries missing from `grads` are treated as zero-gradient; their moments
/// still decay.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &BTreeMap<ParamId, Vec<f64>>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if !(cfg.lr > 0.0) {
        return Err(Error::config("learning rate must be positive"));
    }
    if state.m.len() != store.len() {
        return Err(Error::contract("optimizer state does not match the parameter store"));
    }
    for (id, g) in grads {
        let len = store
            .entries()
            .get(id.0)
            .map(|e| e.value.len())
            .ok_or_else(|| Error::contract("gradient for an unknown parameter"))?;
        if g.len() != len {
            return Err(Error::shape("adam_step", &[len], &[g.len()]));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for (i, entry) in store.entries_mut().iter_mut().enumerate() {
        if !entry.trainable {
            continue;
        }
        let g = grads.get(&ParamId(i));
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (k, p) in entry.value.data_mut().iter_mut().enumerate() {
            let gk = g.map_or(0.0, |g| g[k]);
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            *p -= cfg.lr * mhat / (libm::sqrt(vhat) + cfg.eps);
        }
    }
    Ok(())
}
