//! Triple-path knowledge fusion synthesizer.
//!
//! Feature maps `[d, h, w]` become token matrices `[h·w, d]` inside the
//! attention blocks; instance normalization there is per channel over tokens.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{NormEps, Tape, Var};
use crate::error::{Error, Result};
use crate::gec::{gen_semantic_sequence, GecModel};
use crate::iec::{IecConfig, IecStack, IntermediateQueue};
use crate::nn::{Conv, ConvTranspose, Linear, LEAKY_SLOPE};
use crate::params::{Binding, ParamId, ParamStore};
use crate::pose::{
    render_heatmaps, render_semantics, EvolutionFrame, EvolutionSequence, ImageTensor,
    PoseSkeleton, K, NUM_LABELS,
};
use crate::tensor::Tensor;
use crate::Rng;

pub const IN_EPS: f64 = 1e-5;
/// Variance floor of the adaptive normalization statistics.
pub const ADAIN_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    S,
    B,
    L,
}

impl Variant {
    /// Stacked SFE blocks (and, equally, TPKF blocks).
    pub fn depth(self) -> usize {
        match self {
            Variant::S => 2,
            Variant::B => 4,
            Variant::L => 6,
        }
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S" | "s" => Ok(Variant::S),
            "B" | "b" => Ok(Variant::B),
            "L" | "l" => Ok(Variant::L),
            other => Err(Error::config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Component knockouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Fusion blocks keep only their self-attention sub-block.
    pub no_tpkf: bool,
    /// Cross-attention takes its values from the source path instead of the
    /// incremental features.
    pub no_iec: bool,
    /// IE blocks keep only the 3×3 branch.
    pub no_msc: bool,
    /// Skips the adaptive normalization link in fusion blocks.
    pub no_eada: bool,
    pub ie_depth: usize,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            no_tpkf: false,
            no_iec: false,
            no_msc: false,
            no_eada: false,
            ie_depth: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub image_size: usize,
    /// Token width.
    pub d: usize,
    pub heads: usize,
    pub variant: Variant,
    /// Intermediate channels of the convolutional encoders and decoder.
    pub enc_channels: usize,
    pub ffn_mult: usize,
    pub queue_capacity: usize,
    pub iec_channels: usize,
    pub disc_channels: usize,
    pub heatmap_sigma: f64,
    pub ablation: Ablation,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            image_size: 64,
            d: 128,
            heads: 2,
            variant: Variant::S,
            enc_channels: 32,
            ffn_mult: 4,
            queue_capacity: 4,
            iec_channels: 32,
            disc_channels: 32,
            heatmap_sigma: 1.5,
            ablation: Ablation::default(),
        }
    }
}

impl FusionConfig {
    pub fn iec_config(&self) -> IecConfig {
        IecConfig {
            capacity: self.queue_capacity,
            base_channels: self.iec_channels,
            depth: self.ablation.ie_depth,
            multi_scale: !self.ablation.no_msc,
        }
    }

    pub fn tokens(&self) -> usize {
        (self.image_size / 4) * (self.image_size / 4)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 || !self.image_size.is_multiple_of(4) {
            return Err(Error::config("image size must be a multiple of 4, at least 16"));
        }
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "token width {} is not divisible by {} heads",
                self.d, self.heads
            )));
        }
        if self.enc_channels == 0 || self.ffn_mult == 0 || self.disc_channels == 0 {
            return Err(Error::config("fusion widths must be positive"));
        }
        if !(self.heatmap_sigma > 0.0) {
            return Err(Error::config("heatmap sigma must be positive"));
        }
        Ok(())
    }
}

/// Image, pose heatmaps and one-hot semantics of the source.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceBundle {
    pub image: ImageTensor,
    pub heatmaps: Tensor,
    pub semantics: Tensor,
}

impl SourceBundle {
    pub fn new(image: ImageTensor, skeleton: &PoseSkeleton, sigma: f64) -> Self {
        let size = image.height();
        SourceBundle {
            heatmaps: render_heatmaps(skeleton, sigma, size),
            semantics: render_semantics(skeleton, size).one_hot(),
            image,
        }
    }

    fn check(&self) -> Result<()> {
        let (h, w) = (self.image.height(), self.image.width());
        if self.heatmaps.shape() != [K, h, w] || self.semantics.shape() != [NUM_LABELS, h, w] {
            return Err(Error::contract("source bundle spatial dimensions disagree"));
        }
        Ok(())
    }
}

/// Pose heatmaps and one-hot semantics of an incremental target.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetBundle {
    pub heatmaps: Tensor,
    pub semantics: Tensor,
}

impl TargetBundle {
    pub fn new(skeleton: &PoseSkeleton, size: usize, sigma: f64) -> Self {
        TargetBundle {
            heatmaps: render_heatmaps(skeleton, sigma, size),
            semantics: render_semantics(skeleton, size).one_hot(),
        }
    }

    /// `[K + 7, H, W]` condition stack.
    pub fn stack(&self) -> Result<Tensor> {
        Tensor::concat0(&[&self.heatmaps, &self.semantics])
    }
}

/// Multi-head scaled dot-product attention over already projected
/// `q[n, d]`, `k[m, d]`, `v[m, d]`. Returns the concatenated head outputs and
/// each head's `[n, m]` weight matrix.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> Result<(Var, Vec<Var>)> {
    let (n, d) = tape.value(q).dims2()?;
    let (m, dk) = tape.value(k).dims2()?;
    let (mv, dv) = tape.value(v).dims2()?;
    if dk != d || mv != m {
        return Err(Error::shape("attention", &[n, d], &[m, dk]));
    }
    if heads == 0 || d % heads != 0 || dv % heads != 0 {
        return Err(Error::config(format!("width {d} is not divisible by {heads} heads")));
    }
    let (hd, hv) = (d / heads, dv / heads);
    let scale = 1.0 / libm::sqrt(hd as f64);
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for j in 0..heads {
        let qj = if heads == 1 { q } else { tape.slice_cols(q, j * hd, (j + 1) * hd)? };
        let kj = if heads == 1 { k } else { tape.slice_cols(k, j * hd, (j + 1) * hd)? };
        let vj = if heads == 1 { v } else { tape.slice_cols(v, j * hv, (j + 1) * hv)? };
        let kt = tape.transpose(kj)?;
        let s = tape.matmul(qj, kt)?;
        let s = tape.scale(s, scale);
        let a = tape.softmax(s);
        outs.push(tape.matmul(a, vj)?);
        weights.push(a);
    }
    let out = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    Ok((out, weights))
}

/// Bias-free query/key/value projections and head merge.
#[derive(Clone, Debug)]
pub struct AttnLayer {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub merge: Linear,
    pub heads: usize,
}

impl AttnLayer {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut Rng) -> Self {
        AttnLayer {
            q: Linear::new(store, &format!("{name}.q"), d, d, false, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, false, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, false, rng),
            merge: Linear::new(store, &format!("{name}.merge"), d, d, false, rng),
            heads,
        }
    }

    /// `Merge(Attn(L_Q(xq), L_K(xk), L_V(xv)))` plus per-head weights.
    pub fn forward(&self, tape: &mut Tape, p: &Binding, xq: Var, xk: Var, xv: Var) -> Result<(Var, Vec<Var>)> {
        let q = self.q.forward(tape, p, xq)?;
        let k = self.k.forward(tape, p, xk)?;
        let v = self.v.forward(tape, p, xv)?;
        let (o, w) = attention(tape, q, k, v, self.heads)?;
        Ok((self.merge.forward(tape, p, o)?, w))
    }
}

/// Token-wise two-layer network.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub up: Linear,
    pub down: Linear,
}

impl Ffn {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, mult: usize, rng: &mut Rng) -> Self {
        Ffn {
            up: Linear::new(store, &format!("{name}.up"), d, mult * d, true, rng),
            down: Linear::new(store, &format!("{name}.down"), mult * d, d, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let h = self.up.forward(tape, p, x)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        self.down.forward(tape, p, h)
    }
}

/// Per-channel instance normalization of tokens `[n, d]`.
pub fn token_norm(tape: &mut Tape, x: Var) -> Result<Var> {
    tape.norm_cols(x, NormEps::Additive(IN_EPS))
}

/// `IN[x + y]`.
fn add_norm(tape: &mut Tape, x: Var, y: Var) -> Result<Var> {
    let s = tape.add(x, y)?;
    token_norm(tape, s)
}

/// Adaptive instance normalization: per channel,
/// `σ(style)·(content − μ(content))/σ(content) + μ(style)` over tokens.
pub fn adain_tape(tape: &mut Tape, content: Var, style: Var) -> Result<Var> {
    if tape.shape(content) != tape.shape(style) {
        return Err(Error::shape("adain", tape.shape(content), tape.shape(style)));
    }
    let n = tape.norm_cols(content, NormEps::Floor(ADAIN_FLOOR))?;
    let sd = tape.col_std(style, ADAIN_FLOOR)?;
    let mu = tape.col_mean(style)?;
    let y = tape.mul_row(n, sd)?;
    tape.add_row(y, mu)
}

pub fn adain(content: &Tensor, style: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let c = tape.constant(content.clone());
    let s = tape.constant(style.clone());
    let y = adain_tape(&mut tape, c, s)?;
    Ok(tape.value(y).clone())
}

/// Source feature extraction block.
#[derive(Clone, Debug)]
pub struct SfeBlock {
    pub attn: AttnLayer,
    pub ffn: Ffn,
}

impl SfeBlock {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, mult: usize, rng: &mut Rng) -> Self {
        SfeBlock {
            attn: AttnLayer::new(store, &format!("{name}.attn"), d, heads, rng),
            ffn: Ffn::new(store, &format!("{name}.ffn"), d, mult, rng),
        }
    }

    /// `f̂ = IN[f + MHA(f)]`.
    pub fn attend(&self, tape: &mut Tape, p: &Binding, f: Var) -> Result<(Var, Vec<Var>)> {
        let (a, w) = self.attn.forward(tape, p, f, f, f)?;
        Ok((add_norm(tape, f, a)?, w))
    }

    /// `IN[FCN(f̂) + f̂]`.
    pub fn close(&self, tape: &mut Tape, p: &Binding, f: Var) -> Result<Var> {
        let y = self.ffn.forward(tape, p, f)?;
        add_norm(tape, f, y)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, f: Var) -> Result<Var> {
        let (h, _) = self.attend(tape, p, f)?;
        self.close(tape, p, h)
    }
}

/// Which sub-paths a fusion block uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TpkfMode {
    pub cross: bool,
    pub adain: bool,
}

/// Triple-path knowledge fusion block: self-attention, cross-attention
/// (values from the incremental features, queries from the fused path, keys
/// from the source path) with a residual, adaptive normalization against the
/// self-attended features, and the token-wise closure.
#[derive(Clone, Debug)]
pub struct TpkfBlock {
    pub base: SfeBlock,
    pub cross: AttnLayer,
}

impl TpkfBlock {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, mult: usize, rng: &mut Rng) -> Self {
        TpkfBlock {
            base: SfeBlock::new(store, name, d, heads, mult, rng),
            cross: AttnLayer::new(store, &format!("{name}.cross"), d, heads, rng),
        }
    }

    /// Returns the output and the attention weights of every head (self
    /// heads first, then cross heads).
    pub fn forward_with_weights(
        &self,
        tape: &mut Tape,
        p: &Binding,
        f: Var,
        fs: Var,
        values: Var,
        mode: TpkfMode,
    ) -> Result<(Var, Vec<Var>)> {
        let (hat, mut weights) = self.base.attend(tape, p, f)?;
        if !mode.cross {
            return Ok((self.base.close(tape, p, hat)?, weights));
        }
        let (n, _) = tape.value(hat).dims2()?;
        let (ns, _) = tape.value(fs).dims2()?;
        let (nv, _) = tape.value(values).dims2()?;
        if ns != n || nv != n {
            return Err(Error::config(format!(
                "token counts disagree: fused {n}, source {ns}, incremental {nv}"
            )));
        }
        let (c, w) = self.cross.forward(tape, p, hat, fs, values)?;
        weights.extend(w);
        let bar = tape.add(c, hat)?;
        let g = if mode.adain { adain_tape(tape, bar, hat)? } else { bar };
        Ok((self.base.close(tape, p, g)?, weights))
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, f: Var, fs: Var, values: Var, mode: TpkfMode) -> Result<Var> {
        Ok(self.forward_with_weights(tape, p, f, fs, values, mode)?.0)
    }
}

/// Two stride-2 convolution stages: `[c_in, H, W]` → `[d, H/4, W/4]`.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    pub stages: [Conv; 2],
}

impl ConvEncoder {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c: usize, d: usize, rng: &mut Rng) -> Self {
        ConvEncoder {
            stages: [
                Conv::new(store, &format!("{name}.0"), c_in, c, 4, 2, 1, rng),
                Conv::new(store, &format!("{name}.1"), c, d, 4, 2, 1, rng),
            ],
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let h = self.stages[0].forward(tape, p, x)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        self.stages[1].forward(tape, p, h)
    }
}

/// `[d, h, w]` → tokens `[h·w, d]`.
pub fn to_tokens(tape: &mut Tape, x: Var) -> Result<Var> {
    let (d, h, w) = tape.value(x).dims3()?;
    let m = tape.reshape(x, &[d, h * w])?;
    tape.transpose(m)
}

/// Tokens `[h·w, d]` → `[d, h, w]`.
pub fn from_tokens(tape: &mut Tape, t: Var, h: usize, w: usize) -> Result<Var> {
    let (_, d) = tape.value(t).dims2()?;
    let m = tape.transpose(t)?;
    tape.reshape(m, &[d, h, w])
}

/// Two stride-2 transposed stages and a 3×3 output convolution squashed to
/// `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub up1: ConvTranspose,
    pub up2: ConvTranspose,
    pub out: Conv,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, d: usize, c: usize, rng: &mut Rng) -> Self {
        Decoder {
            up1: ConvTranspose::new(store, "dec.up1", d, c, 4, 2, 1, rng),
            up2: ConvTranspose::new(store, "dec.up2", c, c, 4, 2, 1, rng),
            out: Conv::same(store, "dec.out", c, 3, 3, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let h = self.up1.forward(tape, p, x)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let h = self.up2.forward(tape, p, h)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let y = self.out.forward(tape, p, h)?;
        Ok(tape.sigmoid(y))
    }
}

/// Convolutional patch discriminator over `[image, pose heatmaps,
/// semantics]`.
#[derive(Clone, Debug)]
pub struct PatchDisc {
    pub c1: Conv,
    pub c2: Conv,
    pub c3: Conv,
}

impl PatchDisc {
    pub fn new(store: &mut ParamStore, c: usize, rng: &mut Rng) -> Self {
        let c_in = 3 + K + NUM_LABELS;
        PatchDisc {
            c1: Conv::new(store, "disc.c1", c_in, c, 4, 2, 1, rng),
            c2: Conv::new(store, "disc.c2", c, 2 * c, 4, 2, 1, rng),
            c3: Conv::same(store, "disc.c3", 2 * c, 1, 3, rng),
        }
    }

    /// Patch logits `[1, H/4, W/4]`.
    pub fn logits(&self, tape: &mut Tape, p: &Binding, img: Var, cond: Var) -> Result<Var> {
        let x = tape.concat0(&[img, cond])?;
        let h = self.c1.forward(tape, p, x)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let h = self.c2.forward(tape, p, h)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        self.c3.forward(tape, p, h)
    }
}

/// The synthesizer and its image discriminator.
#[derive(Clone, Debug)]
pub struct FusionModel {
    pub cfg: FusionConfig,
    pub params: ParamStore,
    pub disc_params: ParamStore,
    pub src_enc: ConvEncoder,
    pub fus_enc: ConvEncoder,
    pub pos_src: ParamId,
    pub pos_fus: ParamId,
    pub sfe: Vec<SfeBlock>,
    pub tpkf: Vec<TpkfBlock>,
    pub iec: IecStack,
    /// 1×1 projection of the incremental features to the token width.
    pub iec_proj: Conv,
    pub decoder: Decoder,
    pub disc: PatchDisc,
}

/// Tape handles of one source's bundle and path features, shared by every
/// evolution step.
#[derive(Clone, Copy, Debug)]
pub struct SourceVars {
    pub image: Var,
    /// Source tokens after the SFE stack.
    pub fs: Var,
}

impl FusionModel {
    pub fn new(cfg: &FusionConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (d, h, c, m) = (cfg.d, cfg.heads, cfg.enc_channels, cfg.ffn_mult);
        let depth = cfg.variant.depth();
        let c_in = 3 + K + NUM_LABELS;
        let n = cfg.tokens();
        let mut s = ParamStore::new();
        let src_enc = ConvEncoder::new(&mut s, "src_enc", c_in, c, d, rng);
        let fus_enc = ConvEncoder::new(&mut s, "fus_enc", c_in, c, d, rng);
        let pos_src = s.uniform("pos_src", &[n, d], d, rng);
        let pos_fus = s.uniform("pos_fus", &[n, d], d, rng);
        let sfe = (0..depth)
            .map(|i| SfeBlock::new(&mut s, &format!("sfe.{i}"), d, h, m, rng))
            .collect();
        let tpkf = (0..depth)
            .map(|i| TpkfBlock::new(&mut s, &format!("tpkf.{i}"), d, h, m, rng))
            .collect();
        let iec = IecStack::new(&mut s, &cfg.iec_config(), rng)?;
        let iec_proj = Conv::same(&mut s, "iec_proj", iec.out_channels(), d, 1, rng);
        let decoder = Decoder::new(&mut s, d, c, rng);
        let mut ds = ParamStore::new();
        let disc = PatchDisc::new(&mut ds, cfg.disc_channels, rng);
        Ok(FusionModel {
            cfg: cfg.clone(),
            params: s,
            disc_params: ds,
            src_enc,
            fus_enc,
            pos_src,
            pos_fus,
            sfe,
            tpkf,
            iec,
            iec_proj,
            decoder,
            disc,
        })
    }

    pub fn mode(&self) -> TpkfMode {
        let a = &self.cfg.ablation;
        TpkfMode {
            cross: !a.no_tpkf,
            adain: !a.no_eada,
        }
    }

    fn check_size(&self, h: usize, w: usize) -> Result<()> {
        let s = self.cfg.image_size;
        if h != s || w != s {
            return Err(Error::contract(format!("expected {s}x{s} inputs, got {h}x{w}")));
        }
        Ok(())
    }

    /// Encoder tokens `f_S0` of the source bundle (before the SFE stack).
    pub fn source_tokens(&self, tape: &mut Tape, p: &Binding, src: &SourceBundle) -> Result<(Var, Var)> {
        src.check()?;
        self.check_size(src.image.height(), src.image.width())?;
        let x = Tensor::concat0(&[src.image.tensor(), &src.heatmaps, &src.semantics])?;
        let image = tape.constant(src.image.tensor().clone());
        let x = tape.constant(x);
        let e = self.src_enc.forward(tape, p, x)?;
        let t = to_tokens(tape, e)?;
        Ok((tape.add(t, p.get(self.pos_src))?, image))
    }

    /// Source path: encoder tokens through the SFE stack.
    pub fn source_path(&self, tape: &mut Tape, p: &Binding, src: &SourceBundle) -> Result<SourceVars> {
        let (mut f, image) = self.source_tokens(tape, p, src)?;
        for b in &self.sfe {
            f = b.forward(tape, p, f)?;
        }
        Ok(SourceVars { image, fs: f })
    }

    /// Incremental features as tokens `[h·w, d]`.
    pub fn iec_tokens(&self, tape: &mut Tape, p: &Binding, q: &IntermediateQueue) -> Result<Var> {
        let y = crate::iec::iec_forward(tape, p, &self.iec, q)?;
        let y = self.iec_proj.forward(tape, p, y)?;
        to_tokens(tape, y)
    }

    /// One evolution iteration: fuses toward `tgt` and decodes `[3, H, W]`.
    pub fn step(
        &self,
        tape: &mut Tape,
        p: &Binding,
        src: &SourceVars,
        tgt: &TargetBundle,
        q: &IntermediateQueue,
    ) -> Result<Var> {
        let (_, h, w) = tgt.heatmaps.dims3()?;
        self.check_size(h, w)?;
        let cond = tape.constant(tgt.stack()?);
        let x = tape.concat0(&[src.image, cond])?;
        let e = self.fus_enc.forward(tape, p, x)?;
        let t = to_tokens(tape, e)?;
        let mut f = tape.add(t, p.get(self.pos_fus))?;
        let mode = self.mode();
        let values = if !mode.cross || self.cfg.ablation.no_iec {
            src.fs
        } else {
            self.iec_tokens(tape, p, q)?
        };
        for b in &self.tpkf {
            f = b.forward(tape, p, f, src.fs, values, mode)?;
        }
        let map = from_tokens(tape, f, h / 4, w / 4)?;
        self.decoder.forward(tape, p, map)
    }

    /// Patch logits of the image discriminator.
    pub fn disc_logits(&self, tape: &mut Tape, dp: &Binding, img: Var, tgt: &TargetBundle) -> Result<Var> {
        let cond = tape.constant(tgt.stack()?);
        self.disc.logits(tape, dp, img, cond)
    }

    /// Per-patch realness scores `[1, H/4, W/4]`.
    pub fn patch_scores(&self, img: &ImageTensor, tgt: &TargetBundle) -> Result<Tensor> {
        let mut tape = Tape::new();
        let dp = self.disc_params.bind_frozen(&mut tape);
        let x = tape.constant(img.tensor().clone());
        let l = self.disc_logits(&mut tape, &dp, x, tgt)?;
        let s = tape.sigmoid(l);
        Ok(tape.value(s).clone())
    }

    /// Mean patch realness in `(0, 1)`.
    pub fn image_discriminate(&self, img: &ImageTensor, tgt: &TargetBundle) -> Result<f64> {
        Ok(self.patch_scores(img, tgt)?.mean())
    }

    /// One gradient-free synthesis step.
    pub fn synthesize_step(&self, src: &SourceBundle, tgt: &TargetBundle, q: &IntermediateQueue) -> Result<ImageTensor> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let sv = self.source_path(&mut tape, &p, src)?;
        let y = self.step(&mut tape, &p, &sv, tgt, q)?;
        ImageTensor::new(tape.value(y).clone())
    }

    /// Evolution loop over guiding skeletons (the frames after the source):
    /// each step synthesizes toward its guide and feeds the result back
    /// through the queue. The returned sequence holds one frame per guide.
    pub fn synthesize_guided(&self, src: &SourceBundle, guides: &[PoseSkeleton]) -> Result<(ImageTensor, EvolutionSequence)> {
        if guides.is_empty() {
            return Err(Error::contract("at least one guiding frame is required"));
        }
        let size = self.cfg.image_size;
        let semantics = gen_semantic_sequence(guides, size);
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let sv = self.source_path(&mut tape, &p, src)?;
        let mut q = IntermediateQueue::cold_start(self.cfg.queue_capacity, &src.image)?;
        let mut frames = Vec::with_capacity(guides.len());
        for (g, sem) in guides.iter().zip(semantics) {
            let tgt = TargetBundle {
                heatmaps: render_heatmaps(g, self.cfg.heatmap_sigma, size),
                semantics: sem.one_hot(),
            };
            let y = self.step(&mut tape, &p, &sv, &tgt, &q)?;
            let img = ImageTensor::new(tape.value(y).clone())?;
            q.push(img.clone())?;
            frames.push(EvolutionFrame {
                skeleton: g.clone(),
                semantics: sem,
                image: img,
            });
        }
        let seq = EvolutionSequence::new(frames)?;
        Ok((seq.last().image.clone(), seq))
    }

    /// Full synthesis in `steps` iterations: the global evolution model (when
    /// given and `steps > 1`) supplies `steps − 1` intermediate guides between
    /// `ps` and `pt`; `steps = 1` is one-shot generation.
    pub fn synthesize_full(
        &self,
        src: &SourceBundle,
        ps: &PoseSkeleton,
        pt: &PoseSkeleton,
        gec: Option<&GecModel>,
        steps: usize,
        rng: &mut Rng,
    ) -> Result<(ImageTensor, EvolutionSequence)> {
        let guides = guide_sequence(ps, pt, gec, steps, rng)?;
        self.synthesize_guided(src, &guides)
    }
}

/// Guiding skeletons after the source for `steps` iterations.
pub fn guide_sequence(
    ps: &PoseSkeleton,
    pt: &PoseSkeleton,
    gec: Option<&GecModel>,
    steps: usize,
    rng: &mut Rng,
) -> Result<Vec<PoseSkeleton>> {
    match (steps, gec) {
        (0, _) => Err(Error::contract("synthesis needs at least one step")),
        (1, _) => Ok(alloc::vec![pt.clone()]),
        (_, None) => Err(Error::contract("intermediate guides need a global evolution model")),
        (n, Some(g)) => {
            let mut seq = g.guiding_skeletons(ps, pt, n - 1, rng)?;
            seq.remove(0);
            Ok(seq)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_depths() {
        assert_eq!(Variant::S.depth(), 2);
        assert_eq!(Variant::B.depth(), 4);
        assert_eq!(Variant::L.depth(), 6);
        assert_eq!("B".parse::<Variant>().unwrap(), Variant::B);
        assert!("X".parse::<Variant>().is_err());
    }

    #[test]
    fn indivisible_heads_rejected() {
        let cfg = FusionConfig {
            d: 10,
            heads: 3,
            ..FusionConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
