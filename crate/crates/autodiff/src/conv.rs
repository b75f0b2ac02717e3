//! Geometry and im2col/col2im kernels shared by convolution and transposed
//! convolution.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

/// Kernel, stride and zero-padding of a 2D convolution, per axis `(h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Conv2dSpec {
    pub fn square(kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel: (kernel, kernel),
            stride: (stride, stride),
            pad: (pad, pad),
        }
    }

    /// Output extent of the forward convolution along one axis.
    pub fn conv_out(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = extent + 2 * pad;
        if stride == 0 || kernel == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / stride + 1)
    }

    /// Output extent of the transposed convolution along one axis.
    pub fn conv_transpose_out(
        extent: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Option<usize> {
        if extent == 0 || stride == 0 {
            return None;
        }
        ((extent - 1) * stride + kernel).checked_sub(2 * pad).filter(|&n| n > 0)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (
            Self::conv_out(h, self.kernel.0, self.stride.0, self.pad.0),
            Self::conv_out(w, self.kernel.1, self.stride.1, self.pad.1),
        ) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => shape_err("conv2d", format!("input {h}x{w} incompatible with {self:?}")),
        }
    }

    pub fn transpose_output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let out = (
            Self::conv_transpose_out(h, self.kernel.0, self.stride.0, self.pad.0),
            Self::conv_transpose_out(w, self.kernel.1, self.stride.1, self.pad.1),
        );
        match out {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => shape_err(
                "conv_transpose2d",
                format!("input {h}x{w} incompatible with {self:?}"),
            ),
        }
    }
}

/// Image/patch geometry for one `[C, H, W]` sample and its `[Ho, Wo]` grid.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Patches {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub spec: Conv2dSpec,
}

impl Patches {
    pub fn rows(&self) -> usize {
        self.channels * self.spec.kernel.0 * self.spec.kernel.1
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// `image` is `[C, H, W]`; writes its `[C*kh*kw, Ho*Wo]` patch matrix into
    /// `cols`, whose rows are `ld` long, starting at column `off`.
    pub fn im2col(&self, image: &[f32], cols: &mut [f32], ld: usize, off: usize) {
        let (kh, kw) = self.spec.kernel;
        let (sh, sw) = self.spec.stride;
        let (ph, pw) = self.spec.pad;
        let (ow, n) = (self.out_w, self.cols());
        for c in 0..self.channels {
            let plane = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..kh {
                let (r0, r1) = valid_range(ki, sh, ph, self.h, self.out_h);
                for kj in 0..kw {
                    let (c0, c1) = valid_range(kj, sw, pw, self.w, ow);
                    let row = (c * kh + ki) * kw + kj;
                    let dst = &mut cols[row * ld + off..row * ld + off + n];
                    dst[..r0 * ow].fill(0.0);
                    dst[r1 * ow..].fill(0.0);
                    for oi in r0..r1 {
                        let src = &plane[(oi * sh + ki - ph) * self.w..][..self.w];
                        let line = &mut dst[oi * ow..(oi + 1) * ow];
                        line[..c0].fill(0.0);
                        line[c1..].fill(0.0);
                        let j0 = c0 * sw + kj - pw;
                        if sw == 1 {
                            line[c0..c1].copy_from_slice(&src[j0..j0 + c1 - c0]);
                        } else {
                            for (k, d) in line[c0..c1].iter_mut().enumerate() {
                                *d = src[j0 + k * sw];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Patches::im2col`]: scatter-adds `cols` into `image`.
    pub fn col2im(&self, cols: &[f32], ld: usize, off: usize, image: &mut [f32]) {
        let (kh, kw) = self.spec.kernel;
        let (sh, sw) = self.spec.stride;
        let (ph, pw) = self.spec.pad;
        let (ow, n) = (self.out_w, self.cols());
        for c in 0..self.channels {
            let plane = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..kh {
                let (r0, r1) = valid_range(ki, sh, ph, self.h, self.out_h);
                for kj in 0..kw {
                    let (c0, c1) = valid_range(kj, sw, pw, self.w, ow);
                    let row = (c * kh + ki) * kw + kj;
                    let src = &cols[row * ld + off..row * ld + off + n];
                    let j0 = (c0 * sw + kj).wrapping_sub(pw);
                    for oi in r0..r1 {
                        let dst = &mut plane[(oi * sh + ki - ph) * self.w..][..self.w];
                        let line = &src[oi * ow + c0..oi * ow + c1];
                        if sw == 1 {
                            for (d, &v) in dst[j0..j0 + line.len()].iter_mut().zip(line) {
                                *d += v;
                            }
                        } else {
                            for (k, &v) in line.iter().enumerate() {
                                dst[j0 + k * sw] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Samples per GEMM so that the patch buffer stays near 4M floats.
    pub fn chunk(&self, batch: usize) -> usize {
        (CHUNK_FLOATS / (self.rows() * self.cols()).max(1)).clamp(1, batch.max(1))
    }
}

const CHUNK_FLOATS: usize = 1 << 22;

/// Output positions `lo..hi` along one axis whose tap `k` lands inside an
/// input of extent `len`.
fn valid_range(k: usize, stride: usize, pad: usize, len: usize, out: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) }.min(out);
    let hi = if len + pad > k {
        ((len + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// `[nb, c, n]` samples starting at sample `s0` of `src` into `[c, nb*n]`.
pub(crate) fn to_channel_major(src: &[f32], s0: usize, nb: usize, c: usize, n: usize, dst: &mut [f32]) {
    let ld = nb * n;
    for j in 0..nb {
        let sample = &src[(s0 + j) * c * n..(s0 + j + 1) * c * n];
        for ch in 0..c {
            dst[ch * ld + j * n..ch * ld + (j + 1) * n].copy_from_slice(&sample[ch * n..(ch + 1) * n]);
        }
    }
}

/// Inverse of [`to_channel_major`].
pub(crate) fn from_channel_major(src: &[f32], s0: usize, nb: usize, c: usize, n: usize, dst: &mut [f32]) {
    let ld = nb * n;
    for j in 0..nb {
        let sample = &mut dst[(s0 + j) * c * n..(s0 + j + 1) * c * n];
        for ch in 0..c {
            sample[ch * n..(ch + 1) * n].copy_from_slice(&src[ch * ld + j * n..ch * ld + (j + 1) * n]);
        }
    }
}

/// `c[m,n] = beta * c + op(a)[m,k] * op(b)[k,n]`, where `op` optionally
/// transposes a row-major operand.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides describe in-bounds views of `a`, `b` and `c`, whose
    // lengths are checked above; `c` does not alias the inputs.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_brute_force() {
        for (w, k, s, p) in [(8, 3, 1, 1), (8, 4, 2, 1), (7, 3, 2, 2), (5, 4, 3, 0), (4, 5, 1, 3)] {
            let spec = Conv2dSpec { kernel: (1, k), stride: (1, s), pad: (0, p) };
            let out_w = (w + 2 * p - k) / s + 1;
            let pt = Patches { channels: 1, h: 1, w, out_h: 1, out_w, spec };
            for kj in 0..k {
                let inside: Vec<usize> = (0..pt.out_w)
                    .filter(|&oj| {
                        let jj = (oj * s + kj) as isize - p as isize;
                        jj >= 0 && jj < w as isize
                    })
                    .collect();
                let (lo, hi) = valid_range(kj, s, p, w, pt.out_w);
                assert_eq!((lo..hi).collect::<Vec<_>>(), inside, "w{w} k{k} s{s} p{p} kj{kj}");
            }
        }
    }

    #[test]
    fn output_sizes() {
        assert_eq!(Conv2dSpec::conv_out(32, 4, 2, 1), Some(16));
        assert_eq!(Conv2dSpec::conv_out(8, 3, 1, 1), Some(8));
        assert_eq!(Conv2dSpec::conv_out(2, 4, 1, 0), None);
        assert_eq!(Conv2dSpec::conv_transpose_out(8, 4, 2, 1), Some(16));
        assert_eq!(Conv2dSpec::conv_transpose_out(16, 3, 1, 1), Some(16));
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let p = Patches {
            channels: 2,
            h: 5,
            w: 4,
            out_h: 3,
            out_w: 2,
            spec: Conv2dSpec {
                kernel: (3, 2),
                stride: (2, 2),
                pad: (1, 0),
            },
        };
        let x: Vec<f32> = (0..40).map(|i| ((i * 7) % 11) as f32 - 5.0).collect();
        let y: Vec<f32> = (0..p.rows() * p.cols())
            .map(|i| ((i * 5) % 13) as f32 - 6.0)
            .collect();
        let mut cols = vec![0.0; p.rows() * p.cols()];
        p.im2col(&x, &mut cols, p.cols(), 0);
        let lhs: f32 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; 40];
        p.col2im(&y, p.cols(), 0, &mut back);
        let rhs: f32 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
