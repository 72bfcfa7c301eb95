//! 2-D discrete Fourier transforms over the trailing two axes.
//!
//! Rows and columns are transformed with `rustfft` one-dimensional plans.
//! The forward transform is unnormalized; the inverse divides by `H·W`.

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

use super::{Real, Tensor};
use crate::error::{dim_err, Result};

/// Complex counterpart of [`Tensor`], same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<Complex<T>>,
}

impl<T: Real> ComplexTensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![Complex::new(T::zero(), T::zero()); shape.iter().product()],
        }
    }

    pub fn from_real(t: &Tensor<T>) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| Complex::new(v, T::zero())).collect(),
        }
    }

    pub fn re(&self) -> Tensor<T> {
        Tensor::from_fn(&self.shape, |i| self.data[i].re)
    }

    pub fn max_imag_abs(&self) -> T {
        self.data
            .iter()
            .map(|c| c.im.abs())
            .fold(T::zero(), T::max)
    }

    fn plane(&self) -> Result<(usize, usize)> {
        let n = self.shape.len();
        if n < 2 {
            return Err(dim_err!("fft2 needs at least 2 axes, got {:?}", self.shape));
        }
        let (h, w) = (self.shape[n - 2], self.shape[n - 1]);
        if h == 0 || w == 0 {
            return Err(dim_err!("fft2 needs H,W >= 1, got {:?}", self.shape));
        }
        Ok((h, w))
    }
}

/// In-place 2-D transform of every `H×W` plane; plans are shared across planes.
pub(crate) struct Fft2Plan<T: Real> {
    rows: std::sync::Arc<dyn rustfft::Fft<T>>,
    cols: std::sync::Arc<dyn rustfft::Fft<T>>,
    h: usize,
    w: usize,
    scratch: Vec<Complex<T>>,
    column: Vec<Complex<T>>,
}

impl<T: Real> Fft2Plan<T> {
    pub(crate) fn new(h: usize, w: usize, direction: FftDirection) -> Self {
        let mut planner = FftPlanner::new();
        let rows = planner.plan_fft(w, direction);
        let cols = planner.plan_fft(h, direction);
        let scratch_len = rows
            .get_inplace_scratch_len()
            .max(cols.get_inplace_scratch_len());
        Self {
            rows,
            cols,
            h,
            w,
            scratch: vec![Complex::new(T::zero(), T::zero()); scratch_len],
            column: vec![Complex::new(T::zero(), T::zero()); h],
        }
    }

    pub(crate) fn process(&mut self, plane: &mut [Complex<T>]) {
        let (h, w) = (self.h, self.w);
        debug_assert_eq!(plane.len(), h * w);
        self.rows
            .process_with_scratch(plane, &mut self.scratch);
        for x in 0..w {
            for y in 0..h {
                self.column[y] = plane[y * w + x];
            }
            self.cols
                .process_with_scratch(&mut self.column, &mut self.scratch);
            for y in 0..h {
                plane[y * w + x] = self.column[y];
            }
        }
    }
}

fn transform<T: Real>(mut x: ComplexTensor<T>, direction: FftDirection) -> Result<ComplexTensor<T>> {
    let (h, w) = x.plane()?;
    let mut plan = Fft2Plan::new(h, w, direction);
    for plane in x.data.chunks_mut(h * w) {
        plan.process(plane);
    }
    if direction == FftDirection::Inverse {
        let scale = T::one() / T::of((h * w) as f64);
        for v in &mut x.data {
            *v = *v * scale;
        }
    }
    Ok(x)
}

/// Forward DFT of each trailing `H×W` plane of a real tensor.
pub fn fft2<T: Real>(x: &Tensor<T>) -> Result<ComplexTensor<T>> {
    transform(ComplexTensor::from_real(x), FftDirection::Forward)
}

/// Forward DFT of a complex tensor.
pub fn fft2_complex<T: Real>(x: ComplexTensor<T>) -> Result<ComplexTensor<T>> {
    transform(x, FftDirection::Forward)
}

/// Inverse DFT (normalized by `1/(H·W)`), returning the real part.
pub fn ifft2<T: Real>(x: &ComplexTensor<T>) -> Result<Tensor<T>> {
    Ok(transform(x.clone(), FftDirection::Inverse)?.re())
}

/// Inverse DFT keeping the complex result.
pub fn ifft2_complex<T: Real>(x: ComplexTensor<T>) -> Result<ComplexTensor<T>> {
    transform(x, FftDirection::Inverse)
}

/// Multiply every `H×W` plane of `x` by per-plane-group spectra and return the
/// real part of the inverse transform.
///
/// `spectra[g]` applies to the planes of batch item `g` (each item owning
/// `planes_per_item` consecutive planes).
pub(crate) fn apply_spectral_filter<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    planes_per_item: usize,
    spectra: &[Vec<Complex<T>>],
    conjugate: bool,
) -> Vec<T> {
    let plane_len = h * w;
    let mut fwd = Fft2Plan::new(h, w, FftDirection::Forward);
    let mut inv = Fft2Plan::new(h, w, FftDirection::Inverse);
    let scale = T::one() / T::of(plane_len as f64);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); plane_len];
    let mut out = vec![T::zero(); x.len()];
    for (p, (src, dst)) in x
        .chunks(plane_len)
        .zip(out.chunks_mut(plane_len))
        .enumerate()
    {
        let g = &spectra[p / planes_per_item];
        for (b, &v) in buf.iter_mut().zip(src) {
            *b = Complex::new(v, T::zero());
        }
        fwd.process(&mut buf);
        if conjugate {
            for (b, s) in buf.iter_mut().zip(g) {
                *b = *b * s.conj();
            }
        } else {
            for (b, s) in buf.iter_mut().zip(g) {
                *b = *b * *s;
            }
        }
        inv.process(&mut buf);
        for (d, b) in dst.iter_mut().zip(&buf) {
            *d = b.re * scale;
        }
    }
    out
}
