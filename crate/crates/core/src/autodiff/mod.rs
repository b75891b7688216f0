//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! output value. Nodes are appended in evaluation order, so the tape is
//! topologically sorted by construction and [`Tape::backward`] is a single
//! reverse sweep. Parameters enter the tape as tagged leaves; the gradient map
//! returned by the sweep is keyed by their [`ParamId`].

mod backward;
pub mod kernels;

use alloc::vec;
use alloc::vec::Vec;

pub use self::backward::Gradients;
use self::kernels::{col2im, gemm_nn, gemm_tn, im2col, ConvGeom};
use crate::error::{Error, Result};
use crate::params::ParamId;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Epsilon convention for normalization ops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormEps {
    /// `σ = sqrt(var + eps)`.
    Additive(f64),
    /// `σ = sqrt(max(var, eps))`; exact for non-degenerate groups.
    Floor(f64),
}

/// Which elements share statistics in a normalization op.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Groups {
    /// `[C, ...]`: each leading slice is one group.
    Rows { groups: usize, len: usize },
    /// `[n, d]`: each column is one group.
    Cols { rows: usize, cols: usize },
}

impl Groups {
    fn count(&self) -> usize {
        match *self {
            Groups::Rows { groups, .. } => groups,
            Groups::Cols { cols, .. } => cols,
        }
    }

    fn size(&self) -> usize {
        match *self {
            Groups::Rows { len, .. } => len,
            Groups::Cols { rows, .. } => rows,
        }
    }

    /// `(start, stride)` of group `g`.
    fn span(&self, g: usize) -> (usize, usize) {
        match *self {
            Groups::Rows { len, .. } => (g * len, 1),
            Groups::Cols { cols, .. } => (g, cols),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScaleBy(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Ln(Var),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SoftmaxRows(Var),
    Normalize {
        x: Var,
        groups: Groups,
        inv: Vec<f64>,
        floored: Vec<bool>,
    },
    ColMean(Var),
    ColStd {
        x: Var,
        floored: Vec<bool>,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeom,
        out_channels: usize,
    },
    ConvT2d {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeom,
        in_channels: usize,
    },
    Concat0(Vec<Var>),
    Slice0 {
        x: Var,
        offset: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    PadKernel {
        k: Var,
        from: usize,
        to: usize,
    },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::ScaleBy(..) => "scale_by",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Ln(..) => "ln",
            Op::Abs(..) => "abs",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SoftmaxRows(..) => "softmax",
            Op::Normalize { .. } => "normalize",
            Op::ColMean(..) => "col_mean",
            Op::ColStd { .. } => "col_std",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvT2d { .. } => "conv_transpose2d",
            Op::Concat0(..) => "concat0",
            Op::Slice0 { .. } => "slice0",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::PadKernel { .. } => "pad_kernel",
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) needs_grad: bool,
    pub(crate) param: Option<ParamId>,
}

/// Recorded forward computation.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

fn unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    x.map(f)
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("shape checked by caller")
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-libm::fabs(x)))
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is tracked (used for input-gradient checks).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable parameter leaf.
    pub fn param(&mut self, id: ParamId, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
            param: Some(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Name of the first op whose output holds a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.nodes
            .iter()
            .find(|n| !n.value.is_finite())
            .map(|n| n.op.name())
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = zip(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = zip(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = zip(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = unary(self.value(a), |x| c * x);
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = unary(self.value(a), |x| x + c);
        self.push(v, Op::AddScalar(a), &[a])
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    /// Multiplies `x` by the single element held in `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("scale_by", self.shape(x), self.shape(s)));
        }
        let c = self.item(s);
        let v = unary(self.value(x), |e| c * e);
        Ok(self.push(v, Op::ScaleBy(x, s), &[x, s]))
    }

    fn row_operand(&self, op: &'static str, x: Var, row: Var) -> Result<(usize, usize)> {
        let (r, c) = self
            .value(x)
            .dims2()
            .map_err(|_| Error::shape(op, self.shape(x), self.shape(row)))?;
        if self.value(row).len() != c {
            return Err(Error::shape(op, self.shape(x), self.shape(row)));
        }
        Ok((r, c))
    }

    /// Adds the `[1, c]` (or `[c]`) vector `row` to every row of `x[r, c]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, c) = self.row_operand("add_row", x, row)?;
        let rv = self.value(row).data();
        let mut v = self.value(x).clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e += rv[i % c];
        }
        Ok(self.push(v, Op::AddRow(x, row), &[x, row]))
    }

    /// Multiplies every row of `x[r, c]` elementwise by `row`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, c) = self.row_operand("mul_row", x, row)?;
        let rv = self.value(row).data();
        let mut v = self.value(x).clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e *= rv[i % c];
        }
        Ok(self.push(v, Op::MulRow(x, row), &[x, row]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let err = || Error::shape("matmul", va.shape(), vb.shape());
        let (m, k) = va.dims2().map_err(|_| err())?;
        let (k2, n) = vb.dims2().map_err(|_| err())?;
        if k != k2 {
            return Err(err());
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, va.data(), vb.data(), &mut out);
        let v = Tensor::new(&[m, n], out)?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        let data = kernels::transpose(self.value(a).data(), r, c);
        let v = Tensor::new(&[c, r], data)?;
        Ok(self.push(v, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = unary(self.value(a), |x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = unary(self.value(a), libm::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = unary(self.value(a), sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = unary(self.value(a), softplus);
        self.push(v, Op::Softplus(a), &[a])
    }

    /// Natural logarithm; every input element must be positive.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| !(x > 0.0)) {
            return Err(Error::contract("ln of a non-positive value"));
        }
        let v = unary(self.value(a), libm::log);
        Ok(self.push(v, Op::Ln(a), &[a]))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = unary(self.value(a), libm::fabs);
        self.push(v, Op::Abs(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = unary(self.value(a), |x| x * x);
        self.push(v, Op::Square(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).mean());
        self.push(v, Op::Mean(a), &[a])
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = *x.shape().last().expect("tensor has rank >= 1");
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for e in row.iter_mut() {
                *e = libm::exp(*e - m);
                s += *e;
            }
            for e in row.iter_mut() {
                *e /= s;
            }
        }
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    fn normalize(&mut self, x: Var, groups: Groups, eps: NormEps) -> Var {
        let xv = self.value(x);
        let (count, size) = (groups.count(), groups.size());
        let mut out = xv.clone();
        let mut inv = vec![0.0; count];
        let mut floored = vec![false; count];
        for g in 0..count {
            let (start, stride) = groups.span(g);
            let idx = (0..size).map(|i| start + i * stride);
            let mu = idx.clone().map(|i| xv.data()[i]).sum::<f64>() / size as f64;
            let var = idx
                .clone()
                .map(|i| {
                    let d = xv.data()[i] - mu;
                    d * d
                })
                .sum::<f64>()
                / size as f64;
            let sigma = match eps {
                NormEps::Additive(e) => libm::sqrt(var + e),
                NormEps::Floor(e) => {
                    floored[g] = var < e;
                    libm::sqrt(var.max(e))
                }
            };
            inv[g] = 1.0 / sigma;
            for i in idx {
                out.data_mut()[i] = (xv.data()[i] - mu) * inv[g];
            }
        }
        let op = Op::Normalize {
            x,
            groups,
            inv,
            floored,
        };
        self.push(out, op, &[x])
    }

    /// Instance normalization of `x[C, ...]`: zero mean, unit variance per
    /// leading channel.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Var {
        let s = self.shape(x);
        let groups = Groups::Rows {
            groups: s[0],
            len: s[1..].iter().product(),
        };
        self.normalize(x, groups, NormEps::Additive(eps))
    }

    /// Normalizes each column of `x[n, d]` (per-channel statistics over
    /// tokens).
    pub fn norm_cols(&mut self, x: Var, eps: NormEps) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        Ok(self.normalize(x, Groups::Cols { rows, cols }, eps))
    }

    /// Column means of `x[n, d]` as `[1, d]`.
    pub fn col_mean(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; c];
        for row in xv.chunks(c) {
            for (o, e) in out.iter_mut().zip(row) {
                *o += e;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let v = Tensor::new(&[1, c], out)?;
        Ok(self.push(v, Op::ColMean(x), &[x]))
    }

    /// Column standard deviations of `x[n, d]` as `[1, d]`, floored at
    /// `sqrt(floor)`.
    pub fn col_std(&mut self, x: Var, floor: f64) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; c];
        let mut floored = vec![false; c];
        for j in 0..c {
            let mu = (0..r).map(|i| xv[i * c + j]).sum::<f64>() / r as f64;
            let var = (0..r)
                .map(|i| {
                    let d = xv[i * c + j] - mu;
                    d * d
                })
                .sum::<f64>()
                / r as f64;
            floored[j] = var < floor;
            out[j] = libm::sqrt(var.max(floor));
        }
        let v = Tensor::new(&[1, c], out)?;
        Ok(self.push(v, Op::ColStd { x, floored }, &[x]))
    }

    fn conv_geom(
        &self,
        x: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<ConvGeom> {
        let (channels, height, width) = self.value(x).dims3()?;
        if stride == 0 {
            return Err(Error::config("convolution stride must be positive"));
        }
        let span_h = (height + 2 * pad).checked_sub(kernel);
        let span_w = (width + 2 * pad).checked_sub(kernel);
        match (span_h, span_w) {
            (Some(sh), Some(sw)) if sh % stride == 0 && sw % stride == 0 => Ok(ConvGeom {
                channels,
                height,
                width,
                kernel,
                stride,
                pad,
                out_h: sh / stride + 1,
                out_w: sw / stride + 1,
            }),
            _ => Err(Error::config(alloc::format!(
                "non-integral convolution output for {height}x{width}, kernel {kernel}, stride {stride}, pad {pad}"
            ))),
        }
    }

    /// Cross-correlation of `x[C_in,H,W]` with `k[C_out,C_in,s,s]` and an
    /// optional `[C_out]` bias.
    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let ks = self.shape(k).to_vec();
        let [out_channels, cin, s, s2] = ks[..] else {
            return Err(Error::shape("conv2d", self.shape(x), &ks));
        };
        if s != s2 || self.value(x).rank() != 3 || self.shape(x)[0] != cin {
            return Err(Error::shape("conv2d", self.shape(x), &ks));
        }
        if let Some(b) = b {
            if self.value(b).len() != out_channels {
                return Err(Error::shape("conv2d bias", &ks, self.shape(b)));
            }
        }
        let geom = self.conv_geom(x, s, stride, pad)?;
        let cols = im2col(self.value(x).data(), &geom);
        let ol = geom.out_len();
        let mut out = vec![0.0; out_channels * ol];
        gemm_nn(
            out_channels,
            geom.patch_len(),
            ol,
            self.value(k).data(),
            &cols,
            &mut out,
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            for (co, chunk) in out.chunks_mut(ol).enumerate() {
                chunk.iter_mut().for_each(|e| *e += bv[co]);
            }
        }
        let v = Tensor::new(&[out_channels, geom.out_h, geom.out_w], out)?;
        let mut inputs = vec![x, k];
        inputs.extend(b);
        let op = Op::Conv2d {
            x,
            k,
            b,
            geom,
            out_channels,
        };
        Ok(self.push(v, op, &inputs))
    }

    /// Transposed convolution (the adjoint of [`Tape::conv2d`]) of
    /// `x[C_in,h,w]` with `k[C_in,C_out,s,s]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        k: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let ks = self.shape(k).to_vec();
        let [in_channels, cout, s, s2] = ks[..] else {
            return Err(Error::shape("conv_transpose2d", self.shape(x), &ks));
        };
        let (cin, h, w) = self.value(x).dims3()?;
        if s != s2 || cin != in_channels || stride == 0 {
            return Err(Error::shape("conv_transpose2d", self.shape(x), &ks));
        }
        let out_h = ((h - 1) * stride + s)
            .checked_sub(2 * pad)
            .ok_or_else(|| Error::config("transposed convolution padding too large"))?;
        let out_w = ((w - 1) * stride + s)
            .checked_sub(2 * pad)
            .ok_or_else(|| Error::config("transposed convolution padding too large"))?;
        // Geometry of the forward convolution this op is the adjoint of.
        let geom = ConvGeom {
            channels: cout,
            height: out_h,
            width: out_w,
            kernel: s,
            stride,
            pad,
            out_h: h,
            out_w: w,
        };
        if (out_h + 2 * pad - s) / stride + 1 != h || (out_w + 2 * pad - s) / stride + 1 != w {
            return Err(Error::config("inconsistent transposed convolution geometry"));
        }
        let mut cols = vec![0.0; geom.patch_len() * h * w];
        gemm_tn(
            geom.patch_len(),
            in_channels,
            h * w,
            self.value(k).data(),
            self.value(x).data(),
            &mut cols,
        );
        let mut out = vec![0.0; cout * out_h * out_w];
        col2im(&cols, &geom, &mut out);
        if let Some(b) = b {
            if self.value(b).len() != cout {
                return Err(Error::shape("conv_transpose2d bias", &ks, self.shape(b)));
            }
            let bv = self.value(b).data();
            for (co, chunk) in out.chunks_mut(out_h * out_w).enumerate() {
                chunk.iter_mut().for_each(|e| *e += bv[co]);
            }
        }
        let v = Tensor::new(&[cout, out_h, out_w], out)?;
        let mut inputs = vec![x, k];
        inputs.extend(b);
        let op = Op::ConvT2d {
            x,
            k,
            b,
            geom,
            in_channels,
        };
        Ok(self.push(v, op, &inputs))
    }

    /// Concatenation along axis 0.
    pub fn concat0(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat0(&values)?;
        Ok(self.push(v, Op::Concat0(parts.to_vec()), parts))
    }

    /// Rows `start..end` along axis 0.
    pub fn slice0(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if start >= end || end > s[0] {
            return Err(Error::shape("slice0", &s, &[start, end]));
        }
        let inner: usize = s[1..].iter().product();
        let data = self.value(x).data()[start * inner..end * inner].to_vec();
        let mut shape = s.clone();
        shape[0] = end - start;
        let v = Tensor::new(&shape, data)?;
        let op = Op::Slice0 {
            x,
            offset: start * inner,
        };
        Ok(self.push(v, op, &[x]))
    }

    /// Columns `start..end` of `x[r, c]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if start >= end || end > c {
            return Err(Error::shape("slice_cols", &[r, c], &[start, end]));
        }
        let w = end - start;
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&xv[i * c + start..i * c + end]);
        }
        let v = Tensor::new(&[r, w], data)?;
        Ok(self.push(v, Op::SliceCols { x, start }, &[x]))
    }

    /// Concatenation of `[r, c_i]` blocks along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat of an empty list"))?;
        let (r, _) = self.value(first).dims2()?;
        let mut total = 0;
        for &p in parts {
            let (rp, cp) = self.value(p).dims2()?;
            if rp != r {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            total += cp;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let c = self.shape(p)[1];
                data.extend_from_slice(&self.value(p).data()[i * c..(i + 1) * c]);
            }
        }
        let v = Tensor::new(&[r, total], data)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Zero-pads the spatial extent of a `[C_out,C_in,s,s]` kernel to `to×to`,
    /// keeping it centred.
    pub fn pad_kernel(&mut self, k: Var, to: usize) -> Result<Var> {
        let ks = self.shape(k).to_vec();
        let [co, ci, s, s2] = ks[..] else {
            return Err(Error::shape("pad_kernel", &ks, &[to]));
        };
        if s != s2 || to < s || !(to - s).is_multiple_of(2) {
            return Err(Error::shape("pad_kernel", &ks, &[to]));
        }
        let off = (to - s) / 2;
        let kv = self.value(k).data();
        let mut out = vec![0.0; co * ci * to * to];
        for plane in 0..co * ci {
            for y in 0..s {
                for x in 0..s {
                    out[plane * to * to + (y + off) * to + x + off] = kv[plane * s * s + y * s + x];
                }
            }
        }
        let v = Tensor::new(&[co, ci, to, to], out)?;
        Ok(self.push(v, Op::PadKernel { k, from: s, to }, &[k]))
    }
}
