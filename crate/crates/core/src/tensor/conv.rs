//! Cross-correlation kernels (im2col + GEMM) and boundary padding.

use serde::{Deserialize, Serialize};

use super::{matmul, Real};
use crate::error::{dim_err, Result};

/// Boundary handling applied before a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    None,
    Zero(usize),
    /// Half-sample mirror: index `-1` maps to `0`, `-2` to `1`, ...
    Symmetric(usize),
}

impl Padding {
    pub fn size(self) -> usize {
        match self {
            Padding::None => 0,
            Padding::Zero(p) | Padding::Symmetric(p) => p,
        }
    }
}

/// Mirror an index into `[0, n)`; valid for offsets up to `n` outside.
#[inline]
pub(crate) fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - i - 1
    } else {
        i
    };
    j.clamp(0, n - 1) as usize
}

pub(crate) fn check_padding(h: usize, w: usize, padding: Padding) -> Result<()> {
    let p = padding.size();
    if p > 0 && p >= h.min(w) {
        return Err(dim_err!(
            "padding {p} must be smaller than the spatial extents {h}x{w}"
        ));
    }
    Ok(())
}

/// Pad every `H×W` plane of `x` (`planes` planes) by `p` on each side.
pub(crate) fn pad_forward<T: Real>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    padding: Padding,
) -> Vec<T> {
    let p = padding.size();
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![T::zero(); planes * hp * wp];
    let symmetric = matches!(padding, Padding::Symmetric(_));
    for (src, dst) in x.chunks(h * w).zip(out.chunks_mut(hp * wp)) {
        for y in 0..hp {
            let sy = y as isize - p as isize;
            let row = if symmetric {
                mirror(sy, h)
            } else if sy < 0 || sy >= h as isize {
                continue;
            } else {
                sy as usize
            };
            for xx in 0..wp {
                let sx = xx as isize - p as isize;
                let col = if symmetric {
                    mirror(sx, w)
                } else if sx < 0 || sx >= w as isize {
                    continue;
                } else {
                    sx as usize
                };
                dst[y * wp + xx] = src[row * w + col];
            }
        }
    }
    out
}

/// Adjoint of [`pad_forward`]: fold padded gradients back onto the source.
pub(crate) fn pad_backward<T: Real>(
    grad: &[T],
    planes: usize,
    h: usize,
    w: usize,
    padding: Padding,
) -> Vec<T> {
    let p = padding.size();
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![T::zero(); planes * h * w];
    let symmetric = matches!(padding, Padding::Symmetric(_));
    for (src, dst) in grad.chunks(hp * wp).zip(out.chunks_mut(h * w)) {
        for y in 0..hp {
            let sy = y as isize - p as isize;
            let row = if symmetric {
                mirror(sy, h)
            } else if sy < 0 || sy >= h as isize {
                continue;
            } else {
                sy as usize
            };
            for xx in 0..wp {
                let sx = xx as isize - p as isize;
                let col = if symmetric {
                    mirror(sx, w)
                } else if sx < 0 || sx >= w as isize {
                    continue;
                } else {
                    sx as usize
                };
                dst[row * w + col] = dst[row * w + col] + src[y * wp + xx];
            }
        }
    }
    out
}

/// Geometry of an unpadded strided cross-correlation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub(crate) fn new(input: &[usize], weight: &[usize], stride: usize) -> Result<Self> {
        let (&[batch, cin, h, w], &[cout, wcin, kh, kw]) = (input, weight) else {
            return Err(dim_err!(
                "conv2d expects 4-D input and weight, got {:?} and {:?}",
                input,
                weight
            ));
        };
        if wcin != cin {
            return Err(dim_err!(
                "conv2d channel mismatch: input has {cin} channels, weight expects {wcin}"
            ));
        }
        if kh == 0 || kw == 0 || stride == 0 {
            return Err(dim_err!(
                "conv2d needs kernel extents and stride >= 1, got {kh}x{kw} stride {stride}"
            ));
        }
        if kh > h || kw > w {
            return Err(dim_err!(
                "conv2d kernel {kh}x{kw} larger than (padded) input {h}x{w}"
            ));
        }
        Ok(Self {
            batch,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            ho: (h - kh) / stride + 1,
            wo: (w - kw) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    pub(crate) fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.cout, self.ho, self.wo]
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let n = g.col_cols();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let src_row = &plane[(oy * g.stride + ky) * g.w..];
                    let d = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        d.copy_from_slice(&src_row[kx..kx + g.wo]);
                    } else {
                        for (ox, v) in d.iter_mut().enumerate() {
                            *v = src_row[ox * g.stride + kx];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let n = g.col_cols();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let base = (oy * g.stride + ky) * g.w + kx;
                    let s = &src[oy * g.wo..(oy + 1) * g.wo];
                    for (ox, &v) in s.iter().enumerate() {
                        let idx = base + ox * g.stride;
                        plane[idx] = plane[idx] + v;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, x: &[T], weight: &[T]) -> Vec<T> {
    let (m, k, n) = (g.cout, g.col_rows(), g.col_cols());
    let in_len = g.cin * g.h * g.w;
    let mut out = vec![T::zero(); g.batch * m * n];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * n]
    };
    for b in 0..g.batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let ob = &mut out[b * m * n..(b + 1) * m * n];
        if g.is_pointwise() {
            matmul(weight, false, xb, false, ob, m, k, n, false);
        } else {
            im2col(g, xb, &mut cols);
            matmul(weight, false, &cols, false, ob, m, k, n, false);
        }
    }
    out
}

/// Gradients with respect to the (padded) input and the weight.
pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    need_input: bool,
    need_weight: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (m, k, n) = (g.cout, g.col_rows(), g.col_cols());
    let in_len = g.cin * g.h * g.w;
    let mut dx = need_input.then(|| vec![T::zero(); g.batch * in_len]);
    let mut dw = need_weight.then(|| vec![T::zero(); m * k]);
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { k * n }];
    let mut dcols = vec![T::zero(); if need_input && !g.is_pointwise() { k * n } else { 0 }];
    for b in 0..g.batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let gb = &grad_out[b * m * n..(b + 1) * m * n];
        if let Some(dw) = dw.as_mut() {
            let colsb: &[T] = if g.is_pointwise() {
                xb
            } else {
                im2col(g, xb, &mut cols);
                &cols
            };
            // dW (m×k) += dOut (m×n) · colsᵀ (n×k)
            matmul(gb, false, colsb, true, dw, m, n, k, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if g.is_pointwise() {
                matmul(weight, true, gb, false, dxb, k, m, n, true);
            } else {
                // dcols (k×n) = Wᵀ (k×m) · dOut (m×n)
                matmul(weight, true, gb, false, &mut dcols, k, m, n, false);
                col2im(g, &dcols, dxb);
            }
        }
    }
    (dx, dw)
}
