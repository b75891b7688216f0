//! Dense kernels shared by the forward and backward passes.

use alloc::vec;
use alloc::vec::Vec;

/// `c += a·b` over strided operands.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], (rsa, csa): (usize, usize), b: &[f64], (rsb, csb): (usize, usize), c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: the strides describe exactly the `m×k`, `k×n` and `m×n`
    // row- or column-major extents checked above, and `c` does not alias
    // `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c[m,n] += a[m,k] · b[k,n]`
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm(m, k, n, a, (k, 1), b, (n, 1), c);
}

/// `c[m,n] += a[k,m]ᵀ · b[k,n]`
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm(m, k, n, a, (1, m), b, (n, 1), c);
}

/// `c[m,n] += a[m,k] · b[n,k]ᵀ`
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm(m, k, n, a, (k, 1), b, (1, k), c);
}

/// Transposes a row-major `[rows, cols]` buffer.
pub fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// Geometry of a square-kernel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output positions `lo..hi` whose tap at kernel offset `k` lands inside an
/// input axis of length `size`.
fn valid_range(k: usize, size: usize, out: usize, stride: usize, pad: usize) -> (usize, usize) {
    if size + pad <= k {
        return (0, 0);
    }
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = ((size + pad - k - 1) / stride + 1).min(out);
    (lo.min(hi), hi)
}

/// Unfolds `x[C,H,W]` into columns `[C·s·s, H'·W']`.
pub fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let s = g.kernel;
    let mut cols = Vec::with_capacity(g.patch_len() * g.out_len());
    let zeros = |cols: &mut Vec<f64>, n: usize| cols.extend(core::iter::repeat_n(0.0, n));
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..s {
            let (ylo, yhi) = valid_range(ky, g.height, g.out_h, g.stride, g.pad);
            for kx in 0..s {
                let (xlo, xhi) = valid_range(kx, g.width, g.out_w, g.stride, g.pad);
                zeros(&mut cols, ylo * g.out_w);
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &plane[iy * g.width..(iy + 1) * g.width];
                    zeros(&mut cols, xlo);
                    if xhi > xlo {
                        let first = xlo * g.stride + kx - g.pad;
                        if g.stride == 1 {
                            cols.extend_from_slice(&src[first..first + xhi - xlo]);
                        } else {
                            cols.extend(src[first..].iter().step_by(g.stride).take(xhi - xlo));
                        }
                    }
                    zeros(&mut cols, g.out_w - xhi);
                }
                zeros(&mut cols, (g.out_h - yhi) * g.out_w);
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
pub fn col2im(cols: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let (s, ol) = (g.kernel, g.out_len());
    for c in 0..g.channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..s {
            let (ylo, yhi) = valid_range(ky, g.height, g.out_h, g.stride, g.pad);
            for kx in 0..s {
                let (xlo, xhi) = valid_range(kx, g.width, g.out_w, g.stride, g.pad);
                if xhi <= xlo {
                    continue;
                }
                let row = (c * s + ky) * s + kx;
                let src = &cols[row * ol..(row + 1) * ol];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let dst = &mut plane[iy * g.width..(iy + 1) * g.width];
                    let first = xlo * g.stride + kx - g.pad;
                    let srow = &src[oy * g.out_w + xlo..oy * g.out_w + xhi];
                    for (d, v) in dst[first..].iter_mut().step_by(g.stride).zip(srow) {
                        *d += v;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_variants_agree() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect(); // [2,3]
        let b: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect(); // [3,4]
        let mut c1 = vec![0.0; 8];
        gemm_nn(2, 3, 4, &a, &b, &mut c1);
        let mut c2 = vec![0.0; 8];
        gemm_tn(2, 3, 4, &transpose(&a, 2, 3), &b, &mut c2);
        let mut c3 = vec![0.0; 8];
        gemm_nt(2, 3, 4, &a, &transpose(&b, 3, 4), &mut c3);
        for i in 0..8 {
            assert!((c1[i] - c2[i]).abs() < 1e-14);
            assert!((c1[i] - c3[i]).abs() < 1e-14);
        }
    }
}
