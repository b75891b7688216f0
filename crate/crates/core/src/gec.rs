//! Global evolution: encodes the source and target skeletons, evolves pose
//! features through stacked bidirectional recurrent layers and decodes the
//! guiding skeleton sequence.
//!
//! Batched tape values are row-major `[B, ·]`. Sequences handed to the
//! sequence discriminator are stacked time-major: row `t·B + b`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::nn::{Linear, LEAKY_SLOPE};
use crate::params::{Binding, ParamStore};
use crate::pose::{render_semantics, PoseSkeleton, SemanticMap, K};
use crate::tensor::Tensor;
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    /// Update/reset gated cell.
    Gru,
    /// `h' = tanh(x·W + h·U + b)`.
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GecConfig {
    pub feat_dim: usize,
    /// Hidden width per direction.
    pub hidden: usize,
    pub layers: usize,
    pub cell: CellKind,
    pub disc_hidden: usize,
}

impl Default for GecConfig {
    fn default() -> Self {
        GecConfig {
            feat_dim: 512,
            hidden: 256,
            layers: 3,
            cell: CellKind::Gru,
            disc_hidden: 64,
        }
    }
}

/// One recurrent direction.
#[derive(Clone, Debug)]
pub struct Cell {
    pub kind: CellKind,
    pub hidden: usize,
    /// Input projection with bias, `[in, g·d]` (gate blocks: update, reset,
    /// candidate for the gated cell).
    pub wx: Linear,
    /// Recurrent projection, `[d, g·d]`, no bias.
    pub wh: Linear,
}

impl Cell {
    pub fn new(store: &mut ParamStore, name: &str, kind: CellKind, input: usize, d: usize, rng: &mut Rng) -> Self {
        let g = match kind {
            CellKind::Gru => 3,
            CellKind::Tanh => 1,
        };
        Cell {
            kind,
            hidden: d,
            wx: Linear::new(store, &format!("{name}.wx"), input, g * d, true, rng),
            wh: Linear::new(store, &format!("{name}.wh"), d, g * d, false, rng),
        }
    }

    /// One step: `x[B, in]`, `h[B, d]` → `h'[B, d]`.
    pub fn step(&self, tape: &mut Tape, p: &Binding, x: Var, h: Var) -> Result<Var> {
        let gx = self.wx.forward(tape, p, x)?;
        let gh = self.wh.forward(tape, p, h)?;
        match self.kind {
            CellKind::Tanh => {
                let s = tape.add(gx, gh)?;
                Ok(tape.tanh(s))
            }
            CellKind::Gru => {
                let d = self.hidden;
                let xz = tape.slice_cols(gx, 0, d)?;
                let xr = tape.slice_cols(gx, d, 2 * d)?;
                let xn = tape.slice_cols(gx, 2 * d, 3 * d)?;
                let hz = tape.slice_cols(gh, 0, d)?;
                let hr = tape.slice_cols(gh, d, 2 * d)?;
                let hn = tape.slice_cols(gh, 2 * d, 3 * d)?;
                let z = tape.add(xz, hz)?;
                let z = tape.sigmoid(z);
                let r = tape.add(xr, hr)?;
                let r = tape.sigmoid(r);
                let rh = tape.mul(r, hn)?;
                let n = tape.add(xn, rh)?;
                let n = tape.tanh(n);
                let keep = tape.mul(z, h)?;
                let zc = tape.one_minus(z);
                let new = tape.mul(zc, n)?;
                tape.add(new, keep)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct BiLayer {
    pub fwd: Cell,
    pub bwd: Cell,
}

/// Runs stacked bidirectional layers over per-step inputs `xs[t]: [B, in]`.
/// Each output is the column concatenation `[forward_t, backward_t]` of the
/// last layer.
pub fn birnn(tape: &mut Tape, p: &Binding, layers: &[BiLayer], xs: &[Var]) -> Result<Vec<Var>> {
    if xs.is_empty() {
        return Err(Error::contract("recurrent input sequence is empty"));
    }
    let batch = tape.shape(xs[0])[0];
    let mut inputs = xs.to_vec();
    for layer in layers {
        let t_len = inputs.len();
        let h0 = tape.constant(Tensor::zeros(&[batch, layer.fwd.hidden]));
        let mut fwd = Vec::with_capacity(t_len);
        let mut h = h0;
        for &x in &inputs {
            h = layer.fwd.step(tape, p, x, h)?;
            fwd.push(h);
        }
        let hb0 = tape.constant(Tensor::zeros(&[batch, layer.bwd.hidden]));
        let mut bwd = vec![hb0; t_len];
        let mut h = hb0;
        for t in (0..t_len).rev() {
            h = layer.bwd.step(tape, p, inputs[t], h)?;
            bwd[t] = h;
        }
        inputs = fwd
            .into_iter()
            .zip(bwd)
            .map(|(f, b)| tape.concat_cols(&[f, b]))
            .collect::<Result<_>>()?;
    }
    Ok(inputs)
}

/// Temporal-convolution sequence discriminator.
#[derive(Clone, Debug)]
pub struct SeqDisc {
    pub conv1: Linear,
    pub conv2: Linear,
    pub out: Linear,
}

impl SeqDisc {
    fn new(store: &mut ParamStore, hidden: usize, rng: &mut Rng) -> Self {
        SeqDisc {
            conv1: Linear::new(store, "ds.conv1", 3 * 2 * K, hidden, true, rng),
            conv2: Linear::new(store, "ds.conv2", 3 * hidden, hidden, true, rng),
            out: Linear::new(store, "ds.out", hidden, 1, true, rng),
        }
    }

    /// Kernel-3 temporal convolution realized as shifted copies of the rows.
    fn temporal(&self, tape: &mut Tape, p: &Binding, lin: &Linear, x: Var, batch: usize) -> Result<Var> {
        let rows = tape.shape(x)[0];
        let prev = tape.constant(shift_matrix(rows, batch, false));
        let next = tape.constant(shift_matrix(rows, batch, true));
        let xp = tape.matmul(prev, x)?;
        let xn = tape.matmul(next, x)?;
        let cat = tape.concat_cols(&[xp, x, xn])?;
        let y = lin.forward(tape, p, cat)?;
        Ok(tape.leaky_relu(y, LEAKY_SLOPE))
    }

    /// Realness logits `[B, 1]` for time-major stacked coordinates
    /// `x[T·B, 2K]`.
    pub fn logits(&self, tape: &mut Tape, p: &Binding, x: Var, batch: usize) -> Result<Var> {
        let rows = tape.shape(x)[0];
        if batch == 0 || !rows.is_multiple_of(batch) {
            return Err(Error::shape("seq_discriminate", &[rows], &[batch]));
        }
        let t_len = rows / batch;
        let h = self.temporal(tape, p, &self.conv1, x, batch)?;
        let h = self.temporal(tape, p, &self.conv2, h, batch)?;
        let pool = Tensor::from_fn(&[batch, rows], |i| {
            let (b, r) = (i / rows, i % rows);
            if r % batch == b {
                1.0 / t_len as f64
            } else {
                0.0
            }
        });
        let pool = tape.constant(pool);
        let pooled = tape.matmul(pool, h)?;
        self.out.forward(tape, p, pooled)
    }
}

/// `[rows, rows]` matrix moving time-major row `t·B + b` to `(t±1)·B + b`,
/// with zeros past either end.
fn shift_matrix(rows: usize, batch: usize, forward: bool) -> Tensor {
    Tensor::from_fn(&[rows, rows], |i| {
        let (r, c) = (i / rows, i % rows);
        let hit = if forward { c == r + batch } else { c + batch == r };
        if hit {
            1.0
        } else {
            0.0
        }
    })
}

/// Generator and sequence discriminator of the global evolution stage.
#[derive(Clone, Debug)]
pub struct GecModel {
    pub cfg: GecConfig,
    pub params: ParamStore,
    pub disc_params: ParamStore,
    pub encoder: [Linear; 3],
    pub mixer: [Linear; 2],
    pub starter: Linear,
    pub layers: Vec<BiLayer>,
    pub decoder: [Linear; 3],
    pub vis_head: Linear,
    pub disc: SeqDisc,
}

impl GecModel {
    pub fn new(cfg: &GecConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.feat_dim == 0 || cfg.hidden == 0 || cfg.layers == 0 || cfg.disc_hidden == 0 {
            return Err(Error::config("global evolution widths must be positive"));
        }
        let (f, d) = (cfg.feat_dim, cfg.hidden);
        let mut s = ParamStore::new();
        let encoder = [
            Linear::new(&mut s, "enc.0", 2 * K, f, true, rng),
            Linear::new(&mut s, "enc.1", f, f, true, rng),
            Linear::new(&mut s, "enc.2", f, f, true, rng),
        ];
        let mixer = [
            Linear::new(&mut s, "mix.0", 2 * f, f, true, rng),
            Linear::new(&mut s, "mix.1", f, f, true, rng),
        ];
        let starter = Linear::new(&mut s, "starter", 3 * f, f, true, rng);
        let layers = (0..cfg.layers)
            .map(|l| {
                let input = if l == 0 { f } else { 2 * d };
                BiLayer {
                    fwd: Cell::new(&mut s, &format!("rnn.{l}.f"), cfg.cell, input, d, rng),
                    bwd: Cell::new(&mut s, &format!("rnn.{l}.b"), cfg.cell, input, d, rng),
                }
            })
            .collect();
        let decoder = [
            Linear::new(&mut s, "dec.0", 2 * d, f, true, rng),
            Linear::new(&mut s, "dec.1", f, f, true, rng),
            Linear::new(&mut s, "dec.2", f, 2 * K, true, rng),
        ];
        let vis_head = Linear::new(&mut s, "dec.vis", f, K, true, rng);
        let mut ds = ParamStore::new();
        let disc = SeqDisc::new(&mut ds, cfg.disc_hidden, rng);
        Ok(GecModel {
            cfg: cfg.clone(),
            params: s,
            disc_params: ds,
            encoder,
            mixer,
            starter,
            layers,
            decoder,
            vis_head,
            disc,
        })
    }

    /// `x[B, 2K]` (sentinel coordinates for invisible joints) → `[B, F]`.
    pub fn encode(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, l) in self.encoder.iter().enumerate() {
            h = l.forward(tape, p, h)?;
            if i + 1 < self.encoder.len() {
                h = tape.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }

    /// Tiled starter `[f_s, z, mix(f_s, f_t)]` projected to the first layer
    /// input, then `t_len` recurrent steps.
    pub fn evolve(&self, tape: &mut Tape, p: &Binding, fs: Var, ft: Var, z: Var, t_len: usize) -> Result<Vec<Var>> {
        if t_len < 2 {
            return Err(Error::contract(format!("sequence length {t_len} is below 2")));
        }
        let pair = tape.concat_cols(&[fs, ft])?;
        let m = self.mixer[0].forward(tape, p, pair)?;
        let m = tape.leaky_relu(m, LEAKY_SLOPE);
        let m = self.mixer[1].forward(tape, p, m)?;
        let start = tape.concat_cols(&[fs, z, m])?;
        let x = self.starter.forward(tape, p, start)?;
        birnn(tape, p, &self.layers, &vec![x; t_len])
    }

    /// `o[B, 2d]` → (coordinates `[B, 2K]`, visibility logits `[B, K]`).
    pub fn decode(&self, tape: &mut Tape, p: &Binding, o: Var) -> Result<(Var, Var)> {
        let h = self.decoder[0].forward(tape, p, o)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let h = self.decoder[1].forward(tape, p, h)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let coords = self.decoder[2].forward(tape, p, h)?;
        let vis = self.vis_head.forward(tape, p, h)?;
        Ok((coords, vis))
    }

    /// Full generator pass: per-step decoded coordinates and visibility
    /// logits.
    pub fn generate(
        &self,
        tape: &mut Tape,
        p: &Binding,
        src: Var,
        tgt: Var,
        z: Var,
        t_len: usize,
    ) -> Result<Vec<(Var, Var)>> {
        let fs = self.encode(tape, p, src)?;
        let ft = self.encode(tape, p, tgt)?;
        let outs = self.evolve(tape, p, fs, ft, z, t_len)?;
        outs.into_iter().map(|o| self.decode(tape, p, o)).collect()
    }

    pub fn sample_z(&self, rng: &mut Rng, batch: usize) -> Tensor {
        Tensor::from_fn(&[batch, self.cfg.feat_dim], |_| StandardNormal.sample(rng))
    }

    pub fn pose_encode(&self, s: &PoseSkeleton) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::new(&[1, 2 * K], s.flat())?);
        let f = self.encode(&mut tape, &p, x)?;
        tape.value(f).clone().reshape(&[self.cfg.feat_dim])
    }

    /// Decodes one recurrent output (width `2·hidden`) to a skeleton.
    pub fn pose_decode(&self, f: &Tensor) -> Result<PoseSkeleton> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let o = tape.constant(f.clone().reshape(&[1, f.len()])?);
        let (c, v) = self.decode(&mut tape, &p, o)?;
        to_skeleton(tape.value(c).data(), tape.value(v).data())
    }

    /// Unsnapped decoded sequence of `t_len` skeletons for one pair.
    pub fn decode_sequence(&self, ps: &PoseSkeleton, pt: &PoseSkeleton, z: &Tensor, t_len: usize) -> Result<Vec<PoseSkeleton>> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let src = tape.constant(Tensor::new(&[1, 2 * K], ps.flat())?);
        let tgt = tape.constant(Tensor::new(&[1, 2 * K], pt.flat())?);
        let z = tape.constant(z.clone().reshape(&[1, self.cfg.feat_dim])?);
        self.generate(&mut tape, &p, src, tgt, z, t_len)?
            .into_iter()
            .map(|(c, v)| to_skeleton(tape.value(c).data(), tape.value(v).data()))
            .collect()
    }

    /// Guiding skeletons for `increments` intermediate steps: `increments+2`
    /// frames whose endpoints are replaced by the known `ps` and `pt`.
    pub fn guiding_skeletons(
        &self,
        ps: &PoseSkeleton,
        pt: &PoseSkeleton,
        increments: usize,
        rng: &mut Rng,
    ) -> Result<Vec<PoseSkeleton>> {
        let z = self.sample_z(rng, 1);
        let mut seq = self.decode_sequence(ps, pt, &z, increments + 2)?;
        let last = seq.len() - 1;
        seq[0] = ps.clone();
        seq[last] = pt.clone();
        Ok(seq)
    }

    /// Realness scores in `(0, 1)` for equally long skeleton sequences,
    /// invisible joints zeroed.
    pub fn seq_discriminate(&self, seqs: &[Vec<PoseSkeleton>]) -> Result<Vec<f64>> {
        let batch = seqs.len();
        let t_len = seqs.first().map_or(0, Vec::len);
        if batch == 0 || t_len == 0 || seqs.iter().any(|s| s.len() != t_len) {
            return Err(Error::contract("sequences must be non-empty and equally long"));
        }
        let mut data = Vec::with_capacity(batch * t_len * 2 * K);
        for t in 0..t_len {
            for s in seqs {
                data.extend(s[t].masked_flat());
            }
        }
        let mut tape = Tape::new();
        let p = self.disc_params.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::new(&[t_len * batch, 2 * K], data)?);
        let l = self.disc.logits(&mut tape, &p, x, batch)?;
        let s = tape.sigmoid(l);
        Ok(tape.value(s).data().to_vec())
    }
}

/// Thresholds the visibility head at probability 0.5 (logit 0) and clamps
/// visible coordinates into the unit square.
fn to_skeleton(coords: &[f64], vis_logits: &[f64]) -> Result<PoseSkeleton> {
    let points = (0..K)
        .map(|k| [coords[2 * k].clamp(0.0, 1.0), coords[2 * k + 1].clamp(0.0, 1.0)])
        .collect();
    let visible = vis_logits.iter().map(|&l| l > 0.0).collect();
    PoseSkeleton::new(points, visible)
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() || scores.iter().any(|&s| !(s > 0.0 && s < 1.0)) {
        return Err(Error::contract("discriminator scores must lie in (0, 1)"));
    }
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// `E[log(1 − D(fake))] + E[log D(real)]`, the quantity the sequence
/// discriminator maximizes.
pub fn loss_sadv(fake: &[f64], real: &[f64]) -> Result<f64> {
    check_scores(fake)?;
    check_scores(real)?;
    Ok(mean(fake.iter().map(|&s| libm::log(1.0 - s))) + mean(real.iter().map(|&s| libm::log(s))))
}

/// Mean over consecutive pairs and over the coordinates of jointly visible
/// keypoints of the squared difference.
pub fn loss_ncons(seq: &[PoseSkeleton]) -> Result<f64> {
    if seq.len() < 2 {
        return Err(Error::contract("neighbour consistency needs at least two frames"));
    }
    Ok(mean(seq.windows(2).map(|w| sq_coord_mean(&w[0], &w[1]))))
}

/// Mean squared coordinate error over keypoints visible in both skeletons.
pub fn loss_pose(pred: &PoseSkeleton, gt: &PoseSkeleton) -> Result<f64> {
    if pred.points.len() != gt.points.len() || pred.visible.len() != gt.visible.len() {
        return Err(Error::contract("keypoint counts differ"));
    }
    Ok(sq_coord_mean(pred, gt))
}

fn sq_coord_mean(a: &PoseSkeleton, b: &PoseSkeleton) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for k in 0..a.points.len() {
        if a.visible[k] && b.visible[k] {
            for c in 0..2 {
                let d = a.points[k][c] - b.points[k][c];
                total += d * d;
            }
            n += 2;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GecComponents {
    pub sadv: f64,
    pub ncons: f64,
    pub pose: f64,
}

pub fn loss_gec(c: &GecComponents, w: &LossWeights) -> f64 {
    w.sadv * c.sadv + w.ncons * c.ncons + w.pose * c.pose
}

pub fn gen_semantic_sequence(skeletons: &[PoseSkeleton], size: usize) -> Vec<SemanticMap> {
    skeletons.iter().map(|s| render_semantics(s, size)).collect()
}

/// Training batch of `B` pairs with `T` ground-truth frames each.
#[derive(Clone, Debug)]
pub struct GecBatch {
    /// `[B, 2K]` sentinel-coded source and target coordinates.
    pub src: Tensor,
    pub tgt: Tensor,
    pub z: Tensor,
    /// Per step `[B, 2K]`: masked coordinates, coordinate mask, and `[B, K]`
    /// visibility targets.
    pub frames: Vec<Tensor>,
    pub coord_masks: Vec<Tensor>,
    pub vis: Vec<Tensor>,
}

impl GecBatch {
    /// Builds a batch from ground-truth sequences (first and last frames are
    /// the source and target).
    pub fn from_sequences(seqs: &[Vec<PoseSkeleton>], z: Tensor) -> Result<Self> {
        let batch = seqs.len();
        let t_len = seqs.first().map_or(0, Vec::len);
        if batch == 0 || t_len < 2 || seqs.iter().any(|s| s.len() != t_len) {
            return Err(Error::contract("batch sequences must be equally long with at least two frames"));
        }
        let rows = |f: &dyn Fn(&PoseSkeleton) -> Vec<f64>, t: usize, w: usize| {
            Tensor::new(&[batch, w], seqs.iter().flat_map(|s| f(&s[t])).collect())
        };
        let coord_mask = |s: &PoseSkeleton| s.visible.iter().flat_map(|&v| [v as u8 as f64; 2]).collect();
        Ok(GecBatch {
            src: rows(&|s| s.flat(), 0, 2 * K)?,
            tgt: rows(&|s| s.flat(), t_len - 1, 2 * K)?,
            z,
            frames: (0..t_len).map(|t| rows(&|s| s.masked_flat(), t, 2 * K)).collect::<Result<_>>()?,
            coord_masks: (0..t_len).map(|t| rows(&coord_mask, t, 2 * K)).collect::<Result<_>>()?,
            vis: (0..t_len).map(|t| rows(&|s| s.visibility_mask(), t, K)).collect::<Result<_>>()?,
        })
    }

    pub fn batch(&self) -> usize {
        self.src.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Time-major stacked masked ground truth `[T·B, 2K]`.
    pub fn real_stack(&self) -> Result<Tensor> {
        Tensor::concat0(&self.frames.iter().collect::<Vec<_>>())
    }
}

/// Tape values of one generator pass over a batch.
#[derive(Clone, Debug)]
pub struct GecPass {
    /// Per-step decoded coordinates and visibility logits.
    pub steps: Vec<(Var, Var)>,
    /// Time-major decoded coordinates masked by ground-truth visibility.
    pub fake_stack: Var,
}

impl GecModel {
    pub fn forward_batch(&self, tape: &mut Tape, p: &Binding, b: &GecBatch) -> Result<GecPass> {
        let src = tape.constant(b.src.clone());
        let tgt = tape.constant(b.tgt.clone());
        let z = tape.constant(b.z.clone());
        let steps = self.generate(tape, p, src, tgt, z, b.len())?;
        let masked = steps
            .iter()
            .zip(&b.coord_masks)
            .map(|(&(c, _), m)| {
                let m = tape.constant(m.clone());
                tape.mul(c, m)
            })
            .collect::<Result<Vec<_>>>()?;
        let fake_stack = tape.concat0(&masked)?;
        Ok(GecPass { steps, fake_stack })
    }
}

/// Differentiable generator-side terms of one batch.
#[derive(Clone, Copy, Debug)]
pub struct GecTerms {
    /// Non-saturating adversarial term `−E[log D_S(fake)]`.
    pub adv: Var,
    pub ncons: Var,
    pub pose: Var,
    /// Binary cross-entropy of the visibility head.
    pub vis: Var,
    /// The masked decoded stack fed to the discriminator.
    pub fake_stack: Var,
}

/// Generator terms; `dp` must bind the discriminator store (frozen for the
/// generator update).
pub fn generator_terms(
    model: &GecModel,
    tape: &mut Tape,
    p: &Binding,
    dp: &Binding,
    batch: &GecBatch,
) -> Result<GecTerms> {
    let pass = model.forward_batch(tape, p, batch)?;
    let logits = model.disc.logits(tape, dp, pass.fake_stack, batch.batch())?;
    let neg = tape.scale(logits, -1.0);
    let sp = tape.softplus(neg);
    let adv = tape.mean(sp);

    let coords: Vec<Var> = pass.steps.iter().map(|s| s.0).collect();
    let mut diffs = Vec::with_capacity(coords.len() - 1);
    for w in coords.windows(2) {
        let d = tape.sub(w[1], w[0])?;
        diffs.push(tape.square(d));
    }
    let stacked = tape.concat0(&diffs)?;
    let ncons = tape.mean(stacked);

    let mut sq = Vec::with_capacity(coords.len());
    let mut count = 0.0;
    for (t, &c) in coords.iter().enumerate() {
        let gt = tape.constant(batch.frames[t].clone());
        let m = tape.constant(batch.coord_masks[t].clone());
        count += batch.coord_masks[t].sum();
        let d = tape.sub(c, gt)?;
        let d = tape.mul(d, m)?;
        let s = tape.square(d);
        sq.push(tape.sum(s));
    }
    let sq = tape.concat0(&sq)?;
    let total = tape.sum(sq);
    let pose = tape.scale(total, 1.0 / count.max(1.0));

    let mut bce = Vec::with_capacity(coords.len());
    for (t, s) in pass.steps.iter().enumerate() {
        let y = tape.constant(batch.vis[t].clone());
        let sp = tape.softplus(s.1);
        let yl = tape.mul(y, s.1)?;
        let e = tape.sub(sp, yl)?;
        bce.push(tape.mean(e));
    }
    let bce = tape.concat0(&bce)?;
    let vis = tape.mean(bce);
    Ok(GecTerms {
        adv,
        ncons,
        pose,
        vis,
        fake_stack: pass.fake_stack,
    })
}

/// Weighted generator objective
/// `λ_sadv·adv + λ_ncons·ncons + λ_pose·pose + λ_vis·vis`.
pub fn generator_loss(tape: &mut Tape, terms: &GecTerms, w: &LossWeights, lambda_vis: f64) -> Result<Var> {
    let parts = [
        tape.scale(terms.adv, w.sadv),
        tape.scale(terms.ncons, w.ncons),
        tape.scale(terms.pose, w.pose),
        tape.scale(terms.vis, lambda_vis),
    ];
    let cat = tape.concat0(&parts)?;
    Ok(tape.sum(cat))
}

/// Discriminator objective `−E[log D(real)] − E[log(1 − D(fake))]` in
/// logit form; `fake` is a detached decoded stack.
pub fn discriminator_loss(
    model: &GecModel,
    tape: &mut Tape,
    dp: &Binding,
    real: Tensor,
    fake: Tensor,
    batch: usize,
) -> Result<Var> {
    let real = tape.constant(real);
    let fake = tape.constant(fake);
    let lr = model.disc.logits(tape, dp, real, batch)?;
    let lf = model.disc.logits(tape, dp, fake, batch)?;
    let nr = tape.scale(lr, -1.0);
    let a = tape.softplus(nr);
    let b = tape.softplus(lf);
    let a = tape.mean(a);
    let b = tape.mean(b);
    tape.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GecModel {
        let cfg = GecConfig {
            feat_dim: 8,
            hidden: 4,
            layers: 2,
            cell: CellKind::Gru,
            disc_hidden: 4,
        };
        GecModel::new(&cfg, &mut crate::rng_from_seed(1)).unwrap()
    }

    #[test]
    fn shift_matrix_moves_whole_time_steps() {
        let s = shift_matrix(6, 2, true);
        // Row 0 (t=0, b=0) reads row 2 (t=1, b=0).
        assert_eq!(s.data()[2], 1.0);
        assert_eq!(s.data()[4 * 6..].iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn evolve_rejects_short_sequences() {
        let m = tiny();
        let mut tape = Tape::new();
        let p = m.params.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[1, 8]));
        assert!(matches!(m.evolve(&mut tape, &p, x, x, x, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn guiding_endpoints_are_snapped() {
        let m = tiny();
        let ps = crate::pose::skeleton_at_yaw(&crate::pose::Person::random(0, 0), 0.0);
        let pt = crate::pose::skeleton_at_yaw(&crate::pose::Person::random(0, 0), 90.0);
        let seq = m.guiding_skeletons(&ps, &pt, 3, &mut crate::rng_from_seed(0)).unwrap();
        assert_eq!(seq.len(), 5);
        assert_eq!(seq[0], ps);
        assert_eq!(seq[4], pt);
    }
}
