//! Two-stage training: the global evolution model first, then the fusion
//! synthesizer against a frozen copy of it.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::fusion::{guide_sequence, FusionModel, SourceBundle, TargetBundle};
use crate::gec::{discriminator_loss, generator_loss, generator_terms, GecBatch, GecModel};
use crate::iec::IntermediateQueue;
use crate::losses::{l1, perceptual, style, FeaturePyramid, LossWeights, PYRAMID_SEED};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::{ParamId, ParamStore};
use crate::pose::{Dataset, PoseSkeleton};
use crate::tensor::Tensor;
use crate::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Samples per update.
    pub batch_size: usize,
    pub gec_steps: usize,
    pub pis_steps: usize,
    pub seed: u64,
    /// Intermediate guides per synthesis; `T = increments + 1`.
    pub increments: usize,
    /// Increment counts the global evolution model is trained on.
    pub gec_increments: Vec<usize>,
    /// Yaw distance between a training source and its target.
    pub pair_gap_deg: f64,
    /// Guide synthesis with ground-truth intermediate skeletons instead of
    /// the global evolution model.
    pub teacher_guides: bool,
    /// Adds the source-to-source reconstruction term.
    pub self_recon: bool,
    /// Weight of the visibility head's cross-entropy.
    pub lambda_vis: f64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            batch_size: 4,
            gec_steps: 2000,
            pis_steps: 2000,
            seed: 0,
            increments: 5,
            gec_increments: vec![0, 1, 2, 5],
            pair_gap_deg: 90.0,
            teacher_guides: false,
            self_recon: true,
            lambda_vis: 1.0,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || !(self.pair_gap_deg > 0.0) || self.lambda_vis < 0.0 {
            return Err(Error::config("learning rate, batch size and pair gap must be positive"));
        }
        if self.gec_increments.is_empty() {
            return Err(Error::config("at least one GEC increment count is required"));
        }
        self.weights.validate()
    }

    /// Synthesis iterations `T`.
    pub fn steps(&self) -> usize {
        self.increments + 1
    }

    /// Step size with linear decay over the final third of `total` steps.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let start = total - total / 3;
        if step < start || total == 0 {
            self.lr
        } else {
            self.lr * (total - step) as f64 / (total - start) as f64
        }
    }

    fn adam(&self, step: usize, total: usize) -> AdamConfig {
        AdamConfig {
            lr: self.lr_at(step, total),
            ..AdamConfig::default()
        }
    }
}

/// One loss-curve entry, printed as `step <n> <name> <value>`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub name: &'static str,
    pub value: f64,
}

impl fmt::Display for LossRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} {} {}", self.step, self.name, self.value)
    }
}

/// A source view and a target view of one person (yaw indices).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnPair {
    pub person: usize,
    pub source: usize,
    pub target: usize,
}

/// Yaw indices visited when turning from `source` to `target` in `steps`
/// equal moves along the shorter arc (ties turn toward increasing yaw);
/// `steps + 1` entries including both ends.
pub fn path_indices(yaws: usize, source: usize, target: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || yaws == 0 || source >= yaws || target >= yaws {
        return Err(Error::contract("turn path needs positive steps and valid yaw indices"));
    }
    let (n, s, t) = (yaws as i64, source as i64, target as i64);
    let mut delta = (t - s).rem_euclid(n);
    if 2 * delta > n {
        delta -= n;
    }
    Ok((0..=steps as i64)
        .map(|k| {
            let off = libm::round(k as f64 * delta as f64 / steps as f64) as i64;
            (s + off).rem_euclid(n) as usize
        })
        .collect())
}

/// Pair enumeration over held-out persons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSelection {
    /// Every ordered pair of distinct yaws.
    Exhaustive,
    /// A seeded random subset of the exhaustive pairs.
    Sampled(usize),
    /// Both turning directions at a fixed yaw distance.
    Gap(f64),
}

fn gap_index(data: &Dataset, gap_deg: f64) -> Result<usize> {
    let g = gap_deg / data.config.yaw_step_deg;
    let n = libm::round(g);
    if libm::fabs(g - n) > 1e-9 || n < 1.0 || n as usize >= data.yaw_count() {
        return Err(Error::config(format!(
            "pair gap {gap_deg} is not a multiple of the yaw step {}",
            data.config.yaw_step_deg
        )));
    }
    Ok(n as usize)
}

pub fn select_pairs(data: &Dataset, persons: &[usize], sel: &PairSelection, seed: u64) -> Result<Vec<TurnPair>> {
    let yaws = data.yaw_count();
    let mut out = Vec::new();
    match sel {
        PairSelection::Exhaustive | PairSelection::Sampled(_) => {
            for &person in persons {
                for source in 0..yaws {
                    for target in (0..yaws).filter(|&t| t != source) {
                        out.push(TurnPair { person, source, target });
                    }
                }
            }
            if let PairSelection::Sampled(n) = sel {
                out.shuffle(&mut crate::rng_from_seed(seed));
                out.truncate(*n);
            }
        }
        PairSelection::Gap(deg) => {
            let g = gap_index(data, *deg)?;
            for &person in persons {
                for source in 0..yaws {
                    for target in [(source + g) % yaws, (source + yaws - g) % yaws] {
                        if !out.contains(&TurnPair { person, source, target }) {
                            out.push(TurnPair { person, source, target });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Guiding skeletons after the source for `steps` iterations, with
/// `remove` randomly chosen intermediates dropped (the final target always
/// stays). Teacher guides are the ground-truth turning frames.
pub fn guides_for(
    data: &Dataset,
    pair: &TurnPair,
    gec: Option<&GecModel>,
    steps: usize,
    remove: usize,
    teacher: bool,
    rng: &mut Rng,
) -> Result<Vec<PoseSkeleton>> {
    let ps = &data.frame(pair.person, pair.source).skeleton;
    let pt = &data.frame(pair.person, pair.target).skeleton;
    let mut guides = if teacher {
        path_indices(data.yaw_count(), pair.source, pair.target, steps)?[1..]
            .iter()
            .map(|&i| data.frame(pair.person, i).skeleton.clone())
            .collect()
    } else {
        guide_sequence(ps, pt, gec, steps, rng)?
    };
    drop_intermediates(&mut guides, remove, rng)?;
    Ok(guides)
}

/// Removes `remove` randomly chosen guides other than the last one.
pub fn drop_intermediates(guides: &mut Vec<PoseSkeleton>, remove: usize, rng: &mut Rng) -> Result<()> {
    if remove == 0 {
        return Ok(());
    }
    let inner = guides.len().saturating_sub(1);
    if remove > inner {
        return Err(Error::contract(format!("cannot remove {remove} of {inner} intermediates")));
    }
    let mut drop: Vec<usize> = rand::seq::index::sample(rng, inner, remove).into_vec();
    drop.sort_unstable();
    for i in drop.into_iter().rev() {
        guides.remove(i);
    }
    Ok(())
}

fn accumulate(into: &mut BTreeMap<ParamId, Vec<f64>>, g: BTreeMap<ParamId, Vec<f64>>, scale: f64) {
    for (id, v) in g {
        let e = into.entry(id).or_insert_with(|| vec![0.0; v.len()]);
        e.iter_mut().zip(v).for_each(|(a, b)| *a += scale * b);
    }
}

fn finite(step: usize, what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged {
            step,
            what: what.to_string(),
        })
    }
}

/// Random turning sequences of training persons.
fn sample_turn(data: &Dataset, persons: &[usize], gap: usize, steps: usize, rng: &mut Rng) -> Result<(TurnPair, Vec<usize>)> {
    let person = *persons.choose(rng).ok_or_else(|| Error::config("no training persons"))?;
    let yaws = data.yaw_count();
    let source = rng.random_range(0..yaws);
    let target = if rng.random_bool(0.5) {
        (source + gap) % yaws
    } else {
        (source + yaws - gap) % yaws
    };
    let pair = TurnPair { person, source, target };
    let path = path_indices(yaws, source, target, steps)?;
    Ok((pair, path))
}

/// Alternating generator / sequence-discriminator updates.
pub struct GecTrainer {
    pub model: GecModel,
    pub cfg: TrainConfig,
    pub step: usize,
    g_state: AdamState,
    d_state: AdamState,
    rng: Rng,
    gap: usize,
}

impl GecTrainer {
    pub fn new(model: GecModel, cfg: &TrainConfig, data: &Dataset) -> Result<Self> {
        cfg.validate()?;
        let gap = gap_index(data, cfg.pair_gap_deg)?;
        if let Some(n) = cfg.gec_increments.iter().find(|&&n| gap % (n + 1) != 0) {
            return Err(Error::config(format!(
                "a {}° turn cannot be split into {} equal steps",
                cfg.pair_gap_deg,
                n + 1
            )));
        }
        Ok(GecTrainer {
            g_state: AdamState::new(&model.params),
            d_state: AdamState::new(&model.disc_params),
            rng: crate::rng_from_seed(cfg.seed),
            cfg: cfg.clone(),
            model,
            step: 0,
            gap,
        })
    }

    fn sample_batch(&mut self, data: &Dataset) -> Result<GecBatch> {
        let n = *self.cfg.gec_increments.choose(&mut self.rng).unwrap_or(&0);
        let seqs = (0..self.cfg.batch_size)
            .map(|_| {
                let (pair, path) = sample_turn(data, &data.train_ids, self.gap, n + 1, &mut self.rng)?;
                Ok(path.iter().map(|&i| data.frame(pair.person, i).skeleton.clone()).collect())
            })
            .collect::<Result<Vec<Vec<PoseSkeleton>>>>()?;
        let z = self.model.sample_z(&mut self.rng, seqs.len());
        GecBatch::from_sequences(&seqs, z)
    }

    /// One generator update followed by one discriminator update.
    pub fn train_step(&mut self, data: &Dataset) -> Result<Vec<LossRecord>> {
        let batch = self.sample_batch(data)?;
        let (step, total) = (self.step, self.cfg.gec_steps);
        let w = self.cfg.weights;

        let mut tape = Tape::new();
        let p = self.model.params.bind(&mut tape);
        let dp = self.model.disc_params.bind_frozen(&mut tape);
        let terms = generator_terms(&self.model, &mut tape, &p, &dp, &batch)?;
        let loss = generator_loss(&mut tape, &terms, &w, self.cfg.lambda_vis)?;
        let g_loss = finite(step, "gec generator loss", tape.item(loss))?;
        let grads = tape.backward(loss)?.param_map();
        let fake = tape.value(terms.fake_stack).clone();
        let item = |v: Var| tape.item(v);
        let mut recs = vec![
            LossRecord { step, name: "gec_g", value: g_loss },
            LossRecord { step, name: "gec_adv", value: item(terms.adv) },
            LossRecord { step, name: "gec_ncons", value: item(terms.ncons) },
            LossRecord { step, name: "gec_pose", value: item(terms.pose) },
            LossRecord { step, name: "gec_vis", value: item(terms.vis) },
        ];
        adam_step(&mut self.model.params, &grads, &mut self.g_state, &self.cfg.adam(step, total))?;

        let mut tape = Tape::new();
        let dp = self.model.disc_params.bind(&mut tape);
        let d = discriminator_loss(&self.model, &mut tape, &dp, batch.real_stack()?, fake, batch.batch())?;
        let d_loss = finite(step, "gec discriminator loss", tape.item(d))?;
        let grads = tape.backward(d)?.param_map();
        adam_step(&mut self.model.disc_params, &grads, &mut self.d_state, &self.cfg.adam(step, total))?;
        recs.push(LossRecord { step, name: "gec_d", value: d_loss });
        self.step += 1;
        Ok(recs)
    }
}

/// Runs every GEC step, passing each loss record to `log`.
pub fn train_gec(
    data: &Dataset,
    model: GecModel,
    cfg: &TrainConfig,
    mut log: impl FnMut(&LossRecord),
) -> Result<GecModel> {
    let mut t = GecTrainer::new(model, cfg, data)?;
    while t.step < cfg.gec_steps {
        t.train_step(data)?.iter().for_each(&mut log);
    }
    Ok(t.model)
}

/// Held-out pose error of full decoded sequences (no endpoint snapping)
/// for turns of `increments + 2` frames at the training gap, with seeded
/// noise.
pub fn gec_validation(model: &GecModel, data: &Dataset, cfg: &TrainConfig, increments: usize, seed: u64) -> Result<GecValidation> {
    let gap = gap_index(data, cfg.pair_gap_deg)?;
    let mut rng = crate::rng_from_seed(seed);
    let pairs = select_pairs(data, &data.test_ids, &PairSelection::Gap(cfg.pair_gap_deg), seed)?;
    let steps = increments + 1;
    if gap % steps != 0 {
        return Err(Error::config(format!("the training gap cannot be split into {steps} steps")));
    }
    let (mut pose, mut first, mut last) = (0.0, 0.0, 0.0);
    for pair in &pairs {
        let path = path_indices(data.yaw_count(), pair.source, pair.target, steps)?;
        let gt: Vec<&PoseSkeleton> = path.iter().map(|&i| &data.frame(pair.person, i).skeleton).collect();
        let z = model.sample_z(&mut rng, 1);
        let seq = model.decode_sequence(gt[0], gt[steps], &z, steps + 1)?;
        pose += seq.iter().zip(&gt).map(|(s, g)| crate::gec::loss_pose(s, g)).sum::<Result<f64>>()? / seq.len() as f64;
        first += seq[0].mean_keypoint_error(gt[0]);
        last += seq[steps].mean_keypoint_error(gt[steps]);
    }
    let n = pairs.len() as f64;
    Ok(GecValidation {
        pose: pose / n,
        first_error: first / n,
        last_error: last / n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GecValidation {
    /// Mean per-frame pose loss.
    pub pose: f64,
    /// Mean keypoint error of the decoded first frame against `P_s`.
    pub first_error: f64,
    /// Mean keypoint error of the decoded last frame against `P_t`.
    pub last_error: f64,
}

/// Alternating synthesizer / image-discriminator updates against a frozen
/// global evolution model.
pub struct PisTrainer {
    pub model: FusionModel,
    pub cfg: TrainConfig,
    pub step: usize,
    gec: Option<GecModel>,
    gec_digest: Option<u64>,
    pyramid: FeaturePyramid,
    g_state: AdamState,
    d_state: AdamState,
    rng: Rng,
    gap: usize,
}

/// Per-step real image, its guide map and targets, as the discriminator sees them.
type RealStep = (Tensor, Tensor, TargetBundle);

/// Per-sample generator terms (means over iterations).
#[derive(Clone, Copy, Debug, Default)]
struct PisSample {
    total: f64,
    siadv: f64,
    style: f64,
    per: f64,
    img: f64,
    sr: f64,
    d: f64,
}

impl PisTrainer {
    pub fn new(model: FusionModel, gec: Option<GecModel>, cfg: &TrainConfig, data: &Dataset) -> Result<Self> {
        cfg.validate()?;
        if gec.is_none() && !cfg.teacher_guides && cfg.increments > 0 {
            return Err(Error::config("synthesis training needs a global evolution model or teacher guides"));
        }
        if data.image_size() != model.cfg.image_size {
            return Err(Error::config(format!(
                "dataset images are {0}x{0}, the model expects {1}x{1}",
                data.image_size(),
                model.cfg.image_size
            )));
        }
        let gap = gap_index(data, cfg.pair_gap_deg)?;
        Ok(PisTrainer {
            g_state: AdamState::new(&model.params),
            d_state: AdamState::new(&model.disc_params),
            rng: crate::rng_from_seed(cfg.seed),
            pyramid: FeaturePyramid::new(PYRAMID_SEED),
            gec_digest: gec.as_ref().map(|g| g.params.digest() ^ g.disc_params.digest()),
            gec,
            cfg: cfg.clone(),
            model,
            step: 0,
            gap,
        })
    }

    /// Generator gradients of one sample plus the detached outputs the
    /// discriminator sees.
    fn generator_sample(
        &mut self,
        data: &Dataset,
        grads: &mut BTreeMap<ParamId, Vec<f64>>,
    ) -> Result<(PisSample, Vec<RealStep>)> {
        let steps = self.cfg.steps();
        let (pair, path) = sample_turn(data, &data.train_ids, self.gap, steps, &mut self.rng)?;
        let guides = guides_for(data, &pair, self.gec.as_ref(), steps, 0, self.cfg.teacher_guides, &mut self.rng)?;
        let m = &self.model;
        let sigma = m.cfg.heatmap_sigma;
        let size = m.cfg.image_size;
        let w = self.cfg.weights;
        let src = data.frame(pair.person, pair.source);
        let bundle = SourceBundle::new(src.image.clone(), &src.skeleton, sigma);

        let mut tape = Tape::new();
        let p = m.params.bind(&mut tape);
        let dp = m.disc_params.bind_frozen(&mut tape);
        let pp = self.pyramid.bind(&mut tape);
        let sv = m.source_path(&mut tape, &p, &bundle)?;
        let mut q = IntermediateQueue::cold_start(m.cfg.queue_capacity, &src.image)?;
        let mut terms = Vec::new();
        let mut outs = Vec::with_capacity(steps);
        let mut s = PisSample::default();
        for (t, guide) in guides.iter().enumerate() {
            let tgt = TargetBundle::new(guide, size, sigma);
            let y = m.step(&mut tape, &p, &sv, &tgt, &q)?;
            let gt_img = &data.frame(pair.person, path[t + 1]).image;
            let gt = tape.constant(gt_img.tensor().clone());
            let img = l1(&mut tape, y, gt)?;
            let per = perceptual(&mut tape, &self.pyramid, &pp, y, gt)?;
            let sty = style(&mut tape, &self.pyramid, &pp, y, gt)?;
            let logits = m.disc_logits(&mut tape, &dp, y, &tgt)?;
            let neg = tape.scale(logits, -1.0);
            let sp = tape.softplus(neg);
            let adv = tape.mean(sp);
            for (v, acc) in [(adv, &mut s.siadv), (sty, &mut s.style), (per, &mut s.per), (img, &mut s.img)] {
                *acc += tape.item(v) / steps as f64;
            }
            terms.extend([
                tape.scale(adv, w.siadv),
                tape.scale(sty, w.style),
                tape.scale(per, w.per),
                tape.scale(img, w.img),
            ]);
            let out = tape.value(y).clone();
            q.push(crate::pose::ImageTensor::new(out.clone())?)?;
            outs.push((out, gt_img.tensor().clone(), tgt));
        }
        if self.cfg.self_recon {
            let tgt = TargetBundle::new(&src.skeleton, size, sigma);
            let cold = IntermediateQueue::cold_start(m.cfg.queue_capacity, &src.image)?;
            let y = m.step(&mut tape, &p, &sv, &tgt, &cold)?;
            let img = l1(&mut tape, y, sv.image)?;
            let per = perceptual(&mut tape, &self.pyramid, &pp, y, sv.image)?;
            let per = tape.scale(per, w.per);
            let sr = tape.add(img, per)?;
            s.sr = tape.item(sr);
            terms.push(sr);
        }
        let cat = tape.concat0(&terms)?;
        let loss = tape.sum(cat);
        s.total = finite(self.step, "synthesis loss", tape.item(loss))?;
        accumulate(grads, tape.backward(loss)?.param_map(), 1.0 / self.cfg.batch_size as f64);
        Ok((s, outs))
    }

    /// Discriminator gradients for one sample's outputs.
    fn discriminator_sample(
        &self,
        outs: &[(Tensor, Tensor, TargetBundle)],
        grads: &mut BTreeMap<ParamId, Vec<f64>>,
    ) -> Result<f64> {
        let m = &self.model;
        let mut tape = Tape::new();
        let dp = m.disc_params.bind(&mut tape);
        let mut parts = Vec::with_capacity(2 * outs.len());
        for (fake, real, tgt) in outs {
            let f = tape.constant(fake.clone());
            let r = tape.constant(real.clone());
            let lf = m.disc_logits(&mut tape, &dp, f, tgt)?;
            let lr = m.disc_logits(&mut tape, &dp, r, tgt)?;
            let nr = tape.scale(lr, -1.0);
            let a = tape.softplus(nr);
            let b = tape.softplus(lf);
            parts.push(tape.mean(a));
            parts.push(tape.mean(b));
        }
        let cat = tape.concat0(&parts)?;
        let sum = tape.sum(cat);
        let loss = tape.scale(sum, 1.0 / outs.len() as f64);
        let v = finite(self.step, "image discriminator loss", tape.item(loss))?;
        accumulate(grads, tape.backward(loss)?.param_map(), 1.0 / self.cfg.batch_size as f64);
        Ok(v)
    }

    /// One synthesizer update and one discriminator update over a batch.
    pub fn train_step(&mut self, data: &Dataset) -> Result<Vec<LossRecord>> {
        let (step, total) = (self.step, self.cfg.pis_steps);
        let b = self.cfg.batch_size as f64;
        let mut g_grads = BTreeMap::new();
        let mut d_grads = BTreeMap::new();
        let mut mean = PisSample::default();
        for _ in 0..self.cfg.batch_size {
            let (s, outs) = self.generator_sample(data, &mut g_grads)?;
            let d = self.discriminator_sample(&outs, &mut d_grads)?;
            mean.total += s.total / b;
            mean.siadv += s.siadv / b;
            mean.style += s.style / b;
            mean.per += s.per / b;
            mean.img += s.img / b;
            mean.sr += s.sr / b;
            mean.d += d / b;
        }
        let adam = self.cfg.adam(step, total);
        adam_step(&mut self.model.params, &g_grads, &mut self.g_state, &adam)?;
        adam_step(&mut self.model.disc_params, &d_grads, &mut self.d_state, &adam)?;
        self.step += 1;
        let mut recs = vec![
            LossRecord { step, name: "pis_g", value: mean.total },
            LossRecord { step, name: "pis_siadv", value: mean.siadv },
            LossRecord { step, name: "pis_style", value: mean.style },
            LossRecord { step, name: "pis_per", value: mean.per },
            LossRecord { step, name: "pis_img", value: mean.img },
        ];
        if self.cfg.self_recon {
            recs.push(LossRecord { step, name: "pis_sr", value: mean.sr });
        }
        recs.push(LossRecord { step, name: "pis_d", value: mean.d });
        Ok(recs)
    }

    pub fn gec(&self) -> Option<&GecModel> {
        self.gec.as_ref()
    }

    /// Returns the trained synthesizer after confirming the global
    /// evolution model was left untouched.
    pub fn finish(self) -> Result<(FusionModel, Option<GecModel>)> {
        let now = self.gec.as_ref().map(|g| g.params.digest() ^ g.disc_params.digest());
        if now != self.gec_digest {
            return Err(Error::contract("synthesis training modified the global evolution model"));
        }
        Ok((self.model, self.gec))
    }
}

/// Runs every synthesis step, passing each loss record to `log`.
pub fn train_pis(
    data: &Dataset,
    model: FusionModel,
    gec: Option<GecModel>,
    cfg: &TrainConfig,
    mut log: impl FnMut(&LossRecord),
) -> Result<(FusionModel, Option<GecModel>)> {
    let mut t = PisTrainer::new(model, gec, cfg, data)?;
    while t.step < cfg.pis_steps {
        t.train_step(data)?.iter().for_each(&mut log);
    }
    t.finish()
}

/// Digest of every store of a synthesizer.
pub fn fusion_digest(m: &FusionModel) -> u64 {
    digest_pair(&m.params, &m.disc_params)
}

pub fn gec_digest(m: &GecModel) -> u64 {
    digest_pair(&m.params, &m.disc_params)
}

fn digest_pair(a: &ParamStore, b: &ParamStore) -> u64 {
    a.digest().rotate_left(1) ^ b.digest()
}
