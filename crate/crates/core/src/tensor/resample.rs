//! Separable linear resampling (bicubic / bilinear, half-pixel centers,
//! replicated borders).

use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{dim_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    Bicubic,
    Bilinear,
}

/// Keys cubic convolution kernel with `a = -0.5`.
fn cubic(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// One-dimensional resampling operator stored as sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampler1d {
    pub in_len: usize,
    pub out_len: usize,
    taps: Vec<Vec<(usize, f64)>>,
}

impl Resampler1d {
    pub fn new(in_len: usize, scale: f64, method: Interpolation) -> Result<Self> {
        if !(scale == 0.5 || scale == 2.0) {
            return Err(dim_err!("resampling scale must be 0.5 or 2.0, got {scale}"));
        }
        if scale == 0.5 && in_len % 2 != 0 {
            return Err(dim_err!(
                "downsampling by 0.5 needs an even extent, got {in_len}"
            ));
        }
        if in_len == 0 {
            return Err(dim_err!("cannot resample an empty axis"));
        }
        let out_len = (in_len as f64 * scale).round() as usize;
        let last = in_len as isize - 1;
        let taps = (0..out_len)
            .map(|i| {
                let src = (i as f64 + 0.5) / scale - 0.5;
                let base = src.floor() as isize;
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(4);
                let mut push = |j: isize, wgt: f64| {
                    if wgt == 0.0 {
                        return;
                    }
                    let idx = j.clamp(0, last) as usize;
                    match row.iter_mut().find(|(k, _)| *k == idx) {
                        Some(entry) => entry.1 += wgt,
                        None => row.push((idx, wgt)),
                    }
                };
                match method {
                    Interpolation::Bicubic => {
                        for j in base - 1..=base + 2 {
                            push(j, cubic(src - j as f64));
                        }
                    }
                    Interpolation::Bilinear => {
                        let frac = src - base as f64;
                        push(base, 1.0 - frac);
                        push(base + 1, frac);
                    }
                }
                row
            })
            .collect();
        Ok(Self {
            in_len,
            out_len,
            taps,
        })
    }

    /// Dense `out_len × in_len` matrix of the operator.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.in_len]; self.out_len];
        for (i, row) in self.taps.iter().enumerate() {
            for &(j, w) in row {
                m[i][j] += w;
            }
        }
        m
    }

    fn apply_strided<T: Real>(
        &self,
        src: &[T],
        dst: &mut [T],
        src_stride: usize,
        dst_stride: usize,
    ) {
        for (i, row) in self.taps.iter().enumerate() {
            let mut acc = T::zero();
            for &(j, w) in row {
                acc = acc + src[j * src_stride] * T::of(w);
            }
            dst[i * dst_stride] = acc;
        }
    }

    fn apply_transpose_strided<T: Real>(
        &self,
        src: &[T],
        dst: &mut [T],
        src_stride: usize,
        dst_stride: usize,
    ) {
        for (i, row) in self.taps.iter().enumerate() {
            let g = src[i * src_stride];
            for &(j, w) in row {
                dst[j * dst_stride] = dst[j * dst_stride] + g * T::of(w);
            }
        }
    }
}

/// Separable 2-D operator: `rows` acts on the height axis, `cols` on width.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Resample2d {
    pub rows: Resampler1d,
    pub cols: Resampler1d,
}

impl Resample2d {
    pub(crate) fn new(h: usize, w: usize, scale: f64, method: Interpolation) -> Result<Self> {
        Ok(Self {
            rows: Resampler1d::new(h, scale, method)?,
            cols: Resampler1d::new(w, scale, method)?,
        })
    }

    pub(crate) fn forward<T: Real>(&self, x: &[T], planes: usize) -> Vec<T> {
        let (h, w) = (self.rows.in_len, self.cols.in_len);
        let (ho, wo) = (self.rows.out_len, self.cols.out_len);
        let mut tmp = vec![T::zero(); h * wo];
        let mut out = vec![T::zero(); planes * ho * wo];
        for (src, dst) in x.chunks(h * w).zip(out.chunks_mut(ho * wo)) {
            for y in 0..h {
                self.cols
                    .apply_strided(&src[y * w..], &mut tmp[y * wo..], 1, 1);
            }
            for xx in 0..wo {
                self.rows.apply_strided(&tmp[xx..], &mut dst[xx..], wo, wo);
            }
        }
        out
    }

    pub(crate) fn backward<T: Real>(&self, g: &[T], planes: usize) -> Vec<T> {
        let (h, w) = (self.rows.in_len, self.cols.in_len);
        let (ho, wo) = (self.rows.out_len, self.cols.out_len);
        let mut tmp = vec![T::zero(); h * wo];
        let mut out = vec![T::zero(); planes * h * w];
        for (src, dst) in g.chunks(ho * wo).zip(out.chunks_mut(h * w)) {
            tmp.iter_mut().for_each(|v| *v = T::zero());
            for xx in 0..wo {
                self.rows
                    .apply_transpose_strided(&src[xx..], &mut tmp[xx..], wo, wo);
            }
            for y in 0..h {
                self.cols
                    .apply_transpose_strided(&tmp[y * wo..], &mut dst[y * w..], 1, 1);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_sum_to_one() {
        for method in [Interpolation::Bicubic, Interpolation::Bilinear] {
            for scale in [0.5, 2.0] {
                let r = Resampler1d::new(8, scale, method).unwrap();
                for row in r.matrix() {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn bicubic_half_uses_symmetric_taps() {
        let r = Resampler1d::new(8, 0.5, Interpolation::Bicubic).unwrap();
        let m = r.matrix();
        // interior output 1 samples source position 2.5
        assert!((m[1][1] + 0.0625).abs() < 1e-12);
        assert!((m[1][2] - 0.5625).abs() < 1e-12);
        assert!((m[1][3] - 0.5625).abs() < 1e-12);
        assert!((m[1][4] + 0.0625).abs() < 1e-12);
    }

    #[test]
    fn odd_extent_rejected_for_downsampling() {
        assert!(Resampler1d::new(7, 0.5, Interpolation::Bicubic).is_err());
        assert!(Resampler1d::new(7, 2.0, Interpolation::Bicubic).is_ok());
        assert!(Resampler1d::new(8, 3.0, Interpolation::Bicubic).is_err());
    }
}
