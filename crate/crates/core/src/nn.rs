//! Parameterized layers shared by the models.

use alloc::format;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{Binding, ParamId, ParamStore};
use crate::Rng;

/// Negative slope of the leaky rectifier used throughout.
pub const LEAKY_SLOPE: f64 = 0.2;

/// `x[r, in] · W[in, out] + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let w = store.uniform(format!("{name}.w"), &[in_dim, out_dim], in_dim, rng);
        let b = bias.then(|| store.uniform(format!("{name}.b"), &[1, out_dim], in_dim, rng));
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.get(self.w))?;
        match self.b {
            Some(b) => tape.add_row(y, p.get(b)),
            None => Ok(y),
        }
    }

    /// Zeroes weight and bias.
    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.w).data_mut().fill(0.0);
        if let Some(b) = self.b {
            store.get_mut(b).data_mut().fill(0.0);
        }
    }
}

/// Square-kernel convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub k: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let k = store.uniform(format!("{name}.k"), &[out_ch, in_ch, kernel, kernel], fan_in, rng);
        let b = store.uniform(format!("{name}.b"), &[out_ch], fan_in, rng);
        Conv { k, b, stride, pad }
    }

    /// "Same" convolution: stride 1, padding `(s-1)/2`.
    pub fn same(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        rng: &mut Rng,
    ) -> Self {
        Self::new(store, name, in_ch, out_ch, kernel, 1, (kernel - 1) / 2, rng)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        tape.conv2d(x, p.get(self.k), Some(p.get(self.b)), self.stride, self.pad)
    }
}

/// Transposed convolution with bias; kernel layout `[in, out, s, s]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose {
    pub k: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel / (stride * stride);
        let k = store.uniform(format!("{name}.k"), &[in_ch, out_ch, kernel, kernel], fan_in, rng);
        let b = store.uniform(format!("{name}.b"), &[out_ch], fan_in, rng);
        ConvTranspose { k, b, stride, pad }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        tape.conv_transpose2d(x, p.get(self.k), Some(p.get(self.b)), self.stride, self.pad)
    }
}
