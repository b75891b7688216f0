//! Synthesis objectives and their weights.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv, LEAKY_SLOPE};
use crate::params::{Binding, ParamStore};
use crate::pose::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub siadv: f64,
    pub style: f64,
    pub per: f64,
    pub img: f64,
    pub sadv: f64,
    pub ncons: f64,
    pub pose: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            siadv: 2.0,
            style: 500.0,
            per: 0.5,
            img: 5.0,
            sadv: 1.0,
            ncons: 0.01,
            pose: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.siadv, self.style, self.per, self.img, self.sadv, self.ncons, self.pose];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Seed of the frozen feature pyramid.
pub const PYRAMID_SEED: u64 = 0;

/// Three frozen, randomly initialized stride-2 convolution stages with a tap
/// after each.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub params: ParamStore,
    pub stages: [Conv; 3],
}

impl FeaturePyramid {
    pub fn new(seed: u64) -> Self {
        let mut rng = crate::rng_from_seed(seed);
        let mut params = ParamStore::new();
        let stages = [
            Conv::new(&mut params, "pyr.0", 3, 8, 4, 2, 1, &mut rng),
            Conv::new(&mut params, "pyr.1", 8, 16, 4, 2, 1, &mut rng),
            Conv::new(&mut params, "pyr.2", 16, 32, 4, 2, 1, &mut rng),
        ];
        params.freeze();
        FeaturePyramid { params, stages }
    }

    /// Puts the frozen weights on the tape.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        self.params.bind_frozen(tape)
    }

    /// Activations after each stage for an image `x[3, H, W]`.
    pub fn taps(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Vec<Var>> {
        let mut h = x;
        let mut taps = Vec::with_capacity(3);
        for s in &self.stages {
            let y = s.forward(tape, p, h)?;
            h = tape.leaky_relu(y, LEAKY_SLOPE);
            taps.push(h);
        }
        Ok(taps)
    }
}

impl Default for FeaturePyramid {
    fn default() -> Self {
        Self::new(PYRAMID_SEED)
    }
}

fn same_shape(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.tensor().shape() != b.tensor().shape() {
        return Err(Error::contract("image shapes differ"));
    }
    Ok(())
}

/// Mean absolute difference, on the tape.
pub fn l1(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let d = tape.abs(d);
    Ok(tape.mean(d))
}

/// Mean over the three taps of the mean absolute tap difference.
pub fn perceptual(tape: &mut Tape, pyr: &FeaturePyramid, p: &Binding, a: Var, b: Var) -> Result<Var> {
    let ta = pyr.taps(tape, p, a)?;
    let tb = pyr.taps(tape, p, b)?;
    let per_tap = ta
        .into_iter()
        .zip(tb)
        .map(|(x, y)| l1(tape, x, y))
        .collect::<Result<Vec<_>>>()?;
    let cat = tape.concat0(&per_tap)?;
    Ok(tape.mean(cat))
}

/// Channel Gram matrix `F·Fᵀ / (h·w)` of a `[C, h, w]` activation.
pub fn gram(tape: &mut Tape, f: Var) -> Result<Var> {
    let (c, h, w) = tape.value(f).dims3()?;
    let m = tape.reshape(f, &[c, h * w])?;
    let mt = tape.transpose(m)?;
    let g = tape.matmul(m, mt)?;
    Ok(tape.scale(g, 1.0 / (h * w) as f64))
}

/// Mean over the three taps of the mean squared Gram difference.
pub fn style(tape: &mut Tape, pyr: &FeaturePyramid, p: &Binding, a: Var, b: Var) -> Result<Var> {
    let ta = pyr.taps(tape, p, a)?;
    let tb = pyr.taps(tape, p, b)?;
    let mut per_tap = Vec::with_capacity(3);
    for (x, y) in ta.into_iter().zip(tb) {
        let gx = gram(tape, x)?;
        let gy = gram(tape, y)?;
        let d = tape.sub(gx, gy)?;
        let d = tape.square(d);
        per_tap.push(tape.mean(d));
    }
    let cat = tape.concat0(&per_tap)?;
    Ok(tape.mean(cat))
}

fn eval_pair(
    a: &ImageTensor,
    b: &ImageTensor,
    f: impl FnOnce(&mut Tape, Var, Var) -> Result<Var>,
) -> Result<f64> {
    same_shape(a, b)?;
    let mut tape = Tape::new();
    let x = tape.constant(a.tensor().clone());
    let y = tape.constant(b.tensor().clone());
    let out = f(&mut tape, x, y)?;
    Ok(tape.item(out))
}

pub fn loss_img(gen: &ImageTensor, gt: &ImageTensor) -> Result<f64> {
    eval_pair(gen, gt, l1)
}

pub fn loss_per(gen: &ImageTensor, gt: &ImageTensor, pyr: &FeaturePyramid) -> Result<f64> {
    eval_pair(gen, gt, |t, a, b| {
        let p = pyr.bind(t);
        perceptual(t, pyr, &p, a, b)
    })
}

pub fn loss_style(gen: &ImageTensor, gt: &ImageTensor, pyr: &FeaturePyramid) -> Result<f64> {
    eval_pair(gen, gt, |t, a, b| {
        let p = pyr.bind(t);
        style(t, pyr, &p, a, b)
    })
}

/// Single-image adversarial losses `(discriminator, generator)`:
/// `−mean[log real + log(1 − fake)]` and the non-saturating `−mean log fake`.
pub fn loss_siadv(fake: &[f64], real: &[f64]) -> Result<(f64, f64)> {
    let ok = |s: &[f64]| !s.is_empty() && s.iter().all(|&x| x > 0.0 && x < 1.0);
    if !ok(fake) || !ok(real) {
        return Err(Error::contract("discriminator scores must lie in (0, 1)"));
    }
    let mean = |s: &[f64], f: fn(f64) -> f64| s.iter().map(|&x| f(x)).sum::<f64>() / s.len() as f64;
    let d = -(mean(real, libm::log) + mean(fake, |x| libm::log(1.0 - x)));
    let g = -mean(fake, libm::log);
    Ok((d, g))
}

/// Self-reconstruction loss `ℓ1 + λ_per·perceptual` of a source-to-source
/// reconstruction.
pub fn loss_sr(recon: &ImageTensor, src: &ImageTensor, pyr: &FeaturePyramid, w: &LossWeights) -> Result<f64> {
    Ok(loss_img(recon, src)? + w.per * loss_per(recon, src, pyr)?)
}

/// Per-iteration synthesis loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PisComponents {
    pub siadv: f64,
    pub style: f64,
    pub per: f64,
    pub img: f64,
}

/// `Σ_t (λ_siadv·siadv + λ_style·style + λ_per·per + λ_img·img)`.
pub fn loss_es(iters: &[PisComponents], w: &LossWeights) -> f64 {
    iters
        .iter()
        .map(|c| w.siadv * c.siadv + w.style * c.style + w.per * c.per + w.img * c.img)
        .sum()
}

/// Evolution-synthesis loss plus self-reconstruction.
pub fn loss_pis(iters: &[PisComponents], sr: f64, w: &LossWeights) -> f64 {
    loss_es(iters, w) + sr
}
