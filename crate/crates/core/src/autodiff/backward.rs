use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{col2im, gemm_nn, gemm_nt, gemm_tn, im2col, transpose};
use super::{Groups, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamId;

/// Result of a reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to any recorded node, if the node
    /// influenced the loss.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for a bound parameter; zeros when it did not influence the
    /// loss.
    pub fn param(&self, id: ParamId) -> Option<Vec<f64>> {
        self.params.iter().find(|(p, ..)| *p == id).map(|&(_, node, len)| {
            self.grads[node].clone().unwrap_or_else(|| vec![0.0; len])
        })
    }

    /// Parameter id to gradient array, for every parameter leaf on the tape.
    pub fn param_map(&self) -> BTreeMap<ParamId, Vec<f64>> {
        let mut out = BTreeMap::new();
        for &(id, node, len) in &self.params {
            let g = self.grads[node].clone().unwrap_or_else(|| vec![0.0; len]);
            out.entry(id)
                .and_modify(|acc: &mut Vec<f64>| {
                    acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b)
                })
                .or_insert(g);
        }
        out
    }
}

fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], tape: &Tape, v: Var) -> Option<&'a mut [f64]> {
    if !tape.nodes[v.0].needs_grad {
        return None;
    }
    let len = tape.nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn add_into(dst: &mut [f64], src: impl IntoIterator<Item = f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Tape {
    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (p, i, n.value.len())))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                if let Some(d) = acc(grads, self, a) {
                    add_into(d, g.iter().copied());
                }
                if let Some(d) = acc(grads, self, b) {
                    add_into(d, g.iter().copied());
                }
            }
            &Op::Sub(a, b) => {
                if let Some(d) = acc(grads, self, a) {
                    add_into(d, g.iter().copied());
                }
                if let Some(d) = acc(grads, self, b) {
                    add_into(d, g.iter().map(|x| -x));
                }
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                if let Some(d) = acc(grads, self, a) {
                    add_into(d, g.iter().zip(bv).map(|(g, b)| g * b));
                }
                if let Some(d) = acc(grads, self, b) {
                    add_into(d, g.iter().zip(av).map(|(g, a)| g * a));
                }
            }
            &Op::Scale(a, c) => {
                if let Some(d) = acc(grads, self, a) {
                    add_into(d, g.iter().map(|x| c * x));
                }
            }
            &Op::AddScalar(a) | &Op::Reshape(a) => {
                if let Some(d) = acc(grads, self, a) {
                    add_into(d, g.iter().copied());
                }
            }
            &Op::ScaleBy(x, s) => {
                let c = self.item(s);
                let xv = self.value(x).data();
                if let Some(d) = acc(grads, self, x) {
                    add_into(d, g.iter().map(|e| c * e));
                }
                if let Some(d) = acc(grads, self, s) {
                    d[0] += g.iter().zip(xv).map(|(g, x)| g * x).sum::<f64>();
                }
            }
            &Op::AddRow(x, row) => {
                let c = self.value(row).len();
                if let Some(d) = acc(grads, self, x) {
                    add_into(d, g.iter().copied());
                }
                if let Some(d) = acc(grads, self, row) {
                    for chunk in g.chunks(c) {
                        add_into(d, chunk.iter().copied());
                    }
                }
            }
            &Op::MulRow(x, row) => {
                let c = self.value(row).len();
                let (xv, rv) = (self.value(x).data(), self.value(row).data());
                if let Some(d) = acc(grads, self, x) {
                    add_into(d, g.iter().enumerate().map(|(k, g)| g * rv[k % c]));
                }
                if let Some(d) = acc(grads, self, row) {
                    for (gc, xc) in g.chunks(c).zip(xv.chunks(c)) {
                        add_into(d, gc.iter().zip(xc).map(|(g, x)| g * x));
                    }
                }
            }
            &Op::MatMul(a, b) => {
                let (m, k) = self.value(a).dims2().expect("checked in forward");
                let n = self.shape(b)[1];
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                if let Some(d) = acc(grads, self, a) {
                    gemm_nt(m, n, k, g, bv, d);
                }
                if let Some(d) = acc(grads, self, b) {
                    gemm_tn(k, m, n, av, g, d);
                }
            }
            &Op::Transpose(a) => {
                let (r, c) = self.value(a).dims2().expect("checked in forward");
                if let Some(d) = acc(grads, self, a) {
                    add_into(d, transpose(g, c, r));
                }
            }
            &Op::LeakyRelu(a, slope) => {
                let av = self.value(a).data();
                if let Some(d) = acc(grads, self, a) {
                    add_into(
                        d,
                        g.iter()
                            .zip(av)
                            .map(|(g, &x)| if x > 0.0 { *g } else { slope * g }),
                    );
                }
            }
            &Op::Tanh(a) => {
                if let Some(d) = acc(grads, self, a) {
                    add_into(d, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)));
                }
            }
            &Op::Sigmoid(a) => {
                if let Some(d) = acc(grads, self, a) {
                    add_into(d, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)));
                }
            }
            &Op::Softplus(a) => {
                let av = self.value(a).data();
                if let Some(d) = acc(grads, self, a) {
                    add_into(d, g.iter().zip(av).map(|(g, &x)| g * super::sigmoid(x)));
                }
            }
            &Op::Ln(a) => {
                let av = self.value(a).data();
                if let Some(d) = acc(grads, self, a) {
                    add_into(d, g.iter().zip(av).map(|(g, x)| g / x));
                }
            }
            &Op::Abs(a) => {
                let av = self.value(a).data();
                if let Some(d) = acc(grads, self, a) {
                    add_into(
                        d,
                        g.iter().zip(av).map(|(g, &x)| {
                            if x > 0.0 {
                                *g
                            } else if x < 0.0 {
                                -g
                            } else {
                                0.0
                            }
                        }),
                    );
                }
            }
            &Op::Square(a) => {
                let av = self.value(a).data();
                if let Some(d) = acc(grads, self, a) {
                    add_into(d, g.iter().zip(av).map(|(g, x)| 2.0 * x * g));
                }
            }
            &Op::Sum(a) => {
                if let Some(d) = acc(grads, self, a) {
                    d.iter_mut().for_each(|e| *e += g[0]);
                }
            }
            &Op::Mean(a) => {
                let n = self.value(a).len() as f64;
                if let Some(d) = acc(grads, self, a) {
                    d.iter_mut().for_each(|e| *e += g[0] / n);
                }
            }
            &Op::SoftmaxRows(a) => {
                let n = *node.value.shape().last().expect("rank >= 1");
                if let Some(d) = acc(grads, self, a) {
                    for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for ((d, g), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += y * (g - dot);
                        }
                    }
                }
            }
            Op::Normalize {
                x,
                groups,
                inv,
                floored,
            } => {
                if let Some(d) = acc(grads, self, *x) {
                    normalize_backward(d, g, y, groups, inv, floored);
                }
            }
            &Op::ColMean(x) => {
                let (r, c) = self.value(x).dims2().expect("checked in forward");
                if let Some(d) = acc(grads, self, x) {
                    for row in d.chunks_mut(c) {
                        add_into(row, g.iter().map(|g| g / r as f64));
                    }
                }
            }
            Op::ColStd { x, floored } => {
                let (r, c) = self.value(*x).dims2().expect("checked in forward");
                let xv = self.value(*x).data();
                if let Some(d) = acc(grads, self, *x) {
                    for j in 0..c {
                        if floored[j] {
                            continue;
                        }
                        let mu = (0..r).map(|i| xv[i * c + j]).sum::<f64>() / r as f64;
                        let scale = g[j] / (r as f64 * y[j]);
                        for i in 0..r {
                            d[i * c + j] += scale * (xv[i * c + j] - mu);
                        }
                    }
                }
            }
            &Op::Conv2d {
                x,
                k,
                b,
                geom,
                out_channels,
            } => {
                let ol = geom.out_len();
                let pl = geom.patch_len();
                let need_x = self.nodes[x.0].needs_grad;
                let need_k = self.nodes[k.0].needs_grad;
                if need_k {
                    let cols = im2col(self.value(x).data(), &geom);
                    let d = acc(grads, self, k).expect("needs grad");
                    gemm_nt(out_channels, ol, pl, g, &cols, d);
                }
                if need_x {
                    let mut dcols = vec![0.0; pl * ol];
                    gemm_tn(pl, out_channels, ol, self.value(k).data(), g, &mut dcols);
                    let d = acc(grads, self, x).expect("needs grad");
                    col2im(&dcols, &geom, d);
                }
                if let Some(b) = b {
                    if let Some(d) = acc(grads, self, b) {
                        for (co, chunk) in g.chunks(ol).enumerate() {
                            d[co] += chunk.iter().sum::<f64>();
                        }
                    }
                }
            }
            &Op::ConvT2d {
                x,
                k,
                b,
                geom,
                in_channels,
            } => {
                // `g` lives in the forward-convolution input space.
                let hw = geom.out_len();
                let pl = geom.patch_len();
                let gcols = im2col(g, &geom);
                if let Some(d) = acc(grads, self, x) {
                    gemm_nn(in_channels, pl, hw, self.value(k).data(), &gcols, d);
                }
                if let Some(d) = acc(grads, self, k) {
                    gemm_nt(in_channels, hw, pl, self.value(x).data(), &gcols, d);
                }
                if let Some(b) = b {
                    let plane = geom.height * geom.width;
                    if let Some(d) = acc(grads, self, b) {
                        for (co, chunk) in g.chunks(plane).enumerate() {
                            d[co] += chunk.iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::Concat0(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(d) = acc(grads, self, p) {
                        add_into(d, g[off..off + n].iter().copied());
                    }
                    off += n;
                }
            }
            &Op::Slice0 { x, offset } => {
                if let Some(d) = acc(grads, self, x) {
                    add_into(&mut d[offset..offset + g.len()], g.iter().copied());
                }
            }
            &Op::SliceCols { x, start } => {
                let (_, c) = self.value(x).dims2().expect("checked in forward");
                let w = node.value.shape()[1];
                if let Some(d) = acc(grads, self, x) {
                    for (i, gr) in g.chunks(w).enumerate() {
                        add_into(&mut d[i * c + start..i * c + start + w], gr.iter().copied());
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if let Some(d) = acc(grads, self, p) {
                        for (i, dr) in d.chunks_mut(w).enumerate() {
                            add_into(dr, g[i * total + start..i * total + start + w].iter().copied());
                        }
                    }
                    start += w;
                }
            }
            &Op::PadKernel { k, from, to } => {
                let off = (to - from) / 2;
                if let Some(d) = acc(grads, self, k) {
                    for (plane, dp) in d.chunks_mut(from * from).enumerate() {
                        for yy in 0..from {
                            for xx in 0..from {
                                dp[yy * from + xx] +=
                                    g[plane * to * to + (yy + off) * to + xx + off];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn normalize_backward(
    d: &mut [f64],
    g: &[f64],
    y: &[f64],
    groups: &Groups,
    inv: &[f64],
    floored: &[bool],
) {
    let size = groups.size();
    let n = size as f64;
    for grp in 0..groups.count() {
        let (start, stride) = groups.span(grp);
        let idx = (0..size).map(|i| start + i * stride);
        let mean_g = idx.clone().map(|i| g[i]).sum::<f64>() / n;
        if floored[grp] {
            for i in idx {
                d[i] += inv[grp] * (g[i] - mean_g);
            }
        } else {
            let mean_gy = idx.clone().map(|i| g[i] * y[i]).sum::<f64>() / n;
            for i in idx {
                d[i] += inv[grp] * (g[i] - mean_g - y[i] * mean_gy);
            }
        }
    }
}
