//! Incremental evolution: a window of previously generated images is
//! stacked channel-wise and passed through multi-scale convolution blocks.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv, LEAKY_SLOPE};
use crate::params::{Binding, ParamId, ParamStore};
use crate::pose::ImageTensor;
use crate::tensor::Tensor;
use crate::Rng;

/// Most recent generated images, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct IntermediateQueue {
    images: VecDeque<ImageTensor>,
    capacity: usize,
}

impl IntermediateQueue {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("queue capacity must be positive"));
        }
        Ok(IntermediateQueue {
            images: VecDeque::with_capacity(capacity + 1),
            capacity,
        })
    }

    /// Queue holding only `src` (the cold start).
    pub fn cold_start(capacity: usize, src: &ImageTensor) -> Result<Self> {
        let mut q = Self::new(capacity)?;
        q.push(src.clone())?;
        Ok(q)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageTensor> {
        self.images.iter()
    }

    /// Appends `img`, dropping the oldest entry when over capacity.
    pub fn push(&mut self, img: ImageTensor) -> Result<()> {
        if let Some(first) = self.images.front() {
            if first.tensor().shape() != img.tensor().shape() {
                return Err(Error::contract(format!(
                    "queued image {:?} does not match {:?}",
                    img.tensor().shape(),
                    first.tensor().shape()
                )));
            }
        }
        self.images.push_back(img);
        if self.images.len() > self.capacity {
            self.images.pop_front();
        }
        Ok(())
    }

    /// Channel stack `[3·capacity, H, W]`: queued images oldest to newest,
    /// then zero blocks for the missing slots.
    pub fn assemble(&self) -> Result<Tensor> {
        let first = self
            .images
            .front()
            .ok_or_else(|| Error::contract("cannot assemble an empty queue"))?;
        let (h, w) = (first.height(), first.width());
        let mut data = Vec::with_capacity(3 * self.capacity * h * w);
        for img in &self.images {
            data.extend_from_slice(img.tensor().data());
        }
        data.resize(3 * self.capacity * h * w, 0.0);
        Tensor::new(&[3 * self.capacity, h, w], data)
    }
}

pub fn update_queue(mut q: IntermediateQueue, img: ImageTensor) -> Result<IntermediateQueue> {
    q.push(img)?;
    Ok(q)
}

pub fn assemble_input(q: &IntermediateQueue) -> Result<Tensor> {
    q.assemble()
}

pub const BRANCH_KERNELS: [usize; 3] = [3, 5, 7];

/// Multi-scale convolution unit with softmax scale attention followed by a
/// projection (stride 2 doubles channels; stride 1 keeps them).
#[derive(Clone, Debug)]
pub struct IeBlock {
    /// Same-padded branches with kernels 3, 5, 7; only the 3×3 branch when
    /// multi-scale fusion is disabled.
    pub branches: Vec<Conv>,
    pub scale_logits: ParamId,
    pub proj: Conv,
    pub stride: usize,
}

impl IeBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        mid: usize,
        out: usize,
        stride: usize,
        multi_scale: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let kernels: &[usize] = if multi_scale { &BRANCH_KERNELS } else { &BRANCH_KERNELS[..1] };
        let branches = kernels
            .iter()
            .map(|&k| Conv::same(store, &format!("{name}.k{k}"), in_ch, mid, k, rng))
            .collect();
        let scale_logits = store.zeros(format!("{name}.scale"), &[kernels.len()]);
        let proj = match stride {
            1 => Conv::new(store, &format!("{name}.proj"), mid, out, 3, 1, 1, rng),
            2 => Conv::new(store, &format!("{name}.proj"), mid, out, 4, 2, 1, rng),
            _ => return Err(Error::config("IE block stride must be 1 or 2")),
        };
        Ok(IeBlock {
            branches,
            scale_logits,
            proj,
            stride,
        })
    }

    /// Softmax-normalized branch weights.
    pub fn scale_weights(&self, tape: &mut Tape, p: &Binding) -> Var {
        tape.softmax(p.get(self.scale_logits))
    }

    /// `Σ_s a_s·conv_s(x)` followed by the activation. The branches are
    /// merged into one 7×7 kernel `Σ a_s·pad(k_s)` and bias `Σ a_s·b_s`,
    /// which is the same linear map.
    pub fn fuse(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let a = self.scale_weights(tape, p);
        let size = self.branches.iter().map(|c| tape.shape(p.get(c.k))[2]).max().unwrap_or(1);
        let mut kernel = None;
        let mut bias = None;
        for (i, c) in self.branches.iter().enumerate() {
            let w = tape.slice0(a, i, i + 1)?;
            let k = tape.pad_kernel(p.get(c.k), size)?;
            let k = tape.scale_by(k, w)?;
            let b = tape.scale_by(p.get(c.b), w)?;
            kernel = Some(match kernel {
                None => k,
                Some(acc) => tape.add(acc, k)?,
            });
            bias = Some(match bias {
                None => b,
                Some(acc) => tape.add(acc, b)?,
            });
        }
        let (kernel, bias) = kernel.zip(bias).ok_or_else(|| Error::config("IE block has no branches"))?;
        let y = tape.conv2d(x, kernel, Some(bias), 1, (size - 1) / 2)?;
        Ok(tape.leaky_relu(y, LEAKY_SLOPE))
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let (_, h, w) = tape.value(x).dims3()?;
        if self.stride == 2 && (h % 2 != 0 || w % 2 != 0) {
            return Err(Error::config(format!("IE block needs even spatial dims, got {h}x{w}")));
        }
        let y = self.fuse(tape, p, x)?;
        let y = self.proj.forward(tape, p, y)?;
        Ok(tape.leaky_relu(y, LEAKY_SLOPE))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IecConfig {
    pub capacity: usize,
    /// Output channels `C₀` of the first block.
    pub base_channels: usize,
    /// Stacked blocks; 3 follows the halving schedule, deeper stacks append
    /// size-preserving blocks.
    pub depth: usize,
    pub multi_scale: bool,
}

impl Default for IecConfig {
    fn default() -> Self {
        IecConfig {
            capacity: 4,
            base_channels: 32,
            depth: 3,
            multi_scale: true,
        }
    }
}

/// Stacked IE blocks `(3·cap, H, W) → (C₀, H, W) → (2C₀, H/2, W/2) →
/// (4C₀, H/4, W/4)`.
#[derive(Clone, Debug)]
pub struct IecStack {
    pub cfg: IecConfig,
    pub blocks: Vec<IeBlock>,
}

impl IecStack {
    pub fn new(store: &mut ParamStore, cfg: &IecConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.capacity == 0 || cfg.base_channels == 0 || cfg.depth < 3 {
            return Err(Error::config("IEC needs a positive capacity and width and at least 3 blocks"));
        }
        let c = cfg.base_channels;
        let ms = cfg.multi_scale;
        let mut blocks = Vec::with_capacity(cfg.depth);
        blocks.push(IeBlock::new(store, "iec.0", 3 * cfg.capacity, c, c, 1, ms, rng)?);
        blocks.push(IeBlock::new(store, "iec.1", c, c, 2 * c, 2, ms, rng)?);
        blocks.push(IeBlock::new(store, "iec.2", 2 * c, 2 * c, 4 * c, 2, ms, rng)?);
        for i in 3..cfg.depth {
            blocks.push(IeBlock::new(store, &format!("iec.{i}"), 4 * c, 4 * c, 4 * c, 1, ms, rng)?);
        }
        Ok(IecStack {
            cfg: cfg.clone(),
            blocks,
        })
    }

    pub fn out_channels(&self) -> usize {
        4 * self.cfg.base_channels
    }

    /// `x[3·cap, H, W]` → `[4C₀, H/4, W/4]`.
    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let (c, h, w) = tape.value(x).dims3()?;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::config(format!("IEC input {h}x{w} is not divisible by 4")));
        }
        if c != 3 * self.cfg.capacity {
            return Err(Error::shape("iec_forward", &[c, h, w], &[3 * self.cfg.capacity]));
        }
        let mut y = x;
        for b in &self.blocks {
            y = b.forward(tape, p, y)?;
        }
        Ok(y)
    }
}

/// Assembles the queue and runs the stack.
pub fn iec_forward(tape: &mut Tape, p: &Binding, stack: &IecStack, q: &IntermediateQueue) -> Result<Var> {
    let x = tape.constant(q.assemble()?);
    stack.forward(tape, p, x)
}
