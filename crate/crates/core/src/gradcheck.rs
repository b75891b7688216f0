//! Central finite-difference verification of tape gradients.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compares reverse-mode gradients of the scalar `f(inputs)` with central
/// differences at step `eps`.
///
/// Returns the largest `|analytic - numeric| / max(1, |analytic|, |numeric|)`
/// over every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::config("grad_check eps must lie in [1e-7, 1e-3]"));
    }
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if let Some(op) = tape.first_non_finite() {
            return Err(Error::NonFinite(op));
        }
        Ok(tape.item(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if let Some(op) = tape.first_non_finite() {
        return Err(Error::NonFinite(op));
    }
    let grads = tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(v);
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let fp = eval(&probe)?;
            probe[k].data_mut()[i] = orig - eps;
            let fm = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic.map_or(0.0, |g| g[i]);
            let denom = 1f64.max(libm::fabs(a)).max(libm::fabs(numeric));
            worst = worst.max(libm::fabs(a - numeric) / denom);
        }
    }
    Ok(worst)
}

/// Like [`grad_check`] but differentiates with respect to the entries of a
/// parameter store. At most `max_coords` coordinates per entry are probed,
/// spread evenly across it.
pub fn grad_check_params<F>(
    store: &crate::params::ParamStore,
    f: F,
    eps: f64,
    max_coords: usize,
) -> Result<f64>
where
    F: Fn(&mut Tape, &crate::params::Binding) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::config("grad_check eps must lie in [1e-7, 1e-3]"));
    }
    let eval = |s: &crate::params::ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let b = s.bind_frozen(&mut tape);
        let out = f(&mut tape, &b)?;
        if let Some(op) = tape.first_non_finite() {
            return Err(Error::NonFinite(op));
        }
        Ok(tape.item(out))
    };
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let out = f(&mut tape, &binding)?;
    if let Some(op) = tape.first_non_finite() {
        return Err(Error::NonFinite(op));
    }
    let grads = tape.backward(out)?.param_map();

    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for (k, entry) in store.entries().iter().enumerate() {
        if !entry.trainable {
            continue;
        }
        let id = crate::params::ParamId(k);
        let n = entry.value.len();
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = entry.value.data()[i];
            probe.get_mut(id).data_mut()[i] = orig + eps;
            let fp = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - eps;
            let fm = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = grads.get(&id).map_or(0.0, |g| g[i]);
            let denom = 1f64.max(libm::fabs(a)).max(libm::fabs(numeric));
            worst = worst.max(libm::fabs(a - numeric) / denom);
        }
    }
    Ok(worst)
}
