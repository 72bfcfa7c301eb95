//! Wiener deconvolution under a circular boundary model, with global
//! noise-to-signal estimation and a local noise-level map.

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, dim_err, Result};
use crate::sim::{kernel_otf, BlurKernel};
use crate::tensor::fft::apply_spectral_filter;
use crate::tensor::{mirror, Real, Tensor};

pub const NSR_MIN: f64 = 1e-8;
pub const NSR_MAX: f64 = 1e2;
const NOISE_MAP_BOX: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NsrEstimate {
    pub sigma_s: f64,
    pub sigma_n: f64,
    pub nsr: f64,
}

fn chw<T: Real>(y: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *y.shape() {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok((c, h, w)),
        _ => Err(dim_err!("expected a [C,H,W] image, got {:?}", y.shape())),
    }
}

/// `size×size` box mean of every plane, symmetric boundary.
fn box_mean(x: &[f64], planes: usize, h: usize, w: usize, size: usize) -> Vec<f64> {
    let r = (size / 2) as isize;
    let norm = 1.0 / (size * size) as f64;
    let mut out = vec![0.0; x.len()];
    let mut rows = vec![0.0; h * w];
    for (src, dst) in x.chunks(h * w).zip(out.chunks_mut(h * w)).take(planes) {
        for y in 0..h {
            for q in 0..w {
                let mut acc = 0.0;
                for d in -r..=r {
                    acc += src[y * w + mirror(q as isize + d, w)];
                }
                rows[y * w + q] = acc;
            }
        }
        for y in 0..h {
            for q in 0..w {
                let mut acc = 0.0;
                for d in -r..=r {
                    acc += rows[mirror(y as isize + d, h) * w + q];
                }
                dst[y * w + q] = acc * norm;
            }
        }
    }
    out
}

fn std_of(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    (v.map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Global NSR of a `[C,H,W]` observation, pooled over channels.
///
/// `σ_s` is the standard deviation of `y`, `σ_n` that of `y` minus its 3×3
/// mean. An image without signal variance gets the upper clamp.
pub fn estimate_nsr<T: Real>(y: &Tensor<T>) -> Result<NsrEstimate> {
    let (c, h, w) = chw(y)?;
    let data: Vec<f64> = y.data().iter().map(|v| v.f64()).collect();
    let smooth = box_mean(&data, c, h, w, 3);
    let sigma_s = std_of(data.iter().copied());
    let sigma_n = std_of(data.iter().zip(&smooth).map(|(a, b)| a - b));
    let signal = sigma_s * sigma_s;
    let nsr = if signal <= 1e-12 {
        NSR_MAX
    } else {
        (sigma_n * sigma_n / signal).clamp(NSR_MIN, NSR_MAX)
    };
    Ok(NsrEstimate {
        sigma_s,
        sigma_n,
        nsr,
    })
}

/// `|y − mean3×3(y)|` averaged over channels, then a 7×7 box mean; `[1,H,W]`.
pub fn estimate_noise_map<T: Real>(y: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(y)?;
    let data: Vec<f64> = y.data().iter().map(|v| v.f64()).collect();
    let smooth = box_mean(&data, c, h, w, 3);
    let mut residual = vec![0.0; h * w];
    for (i, (a, b)) in data.iter().zip(&smooth).enumerate() {
        residual[i % (h * w)] += (a - b).abs() / c as f64;
    }
    let map = box_mean(&residual, 1, h, w, NOISE_MAP_BOX);
    Ok(Tensor::from_fn(&[1, h, w], |i| T::of(map[i])))
}

/// Frequency response `G = conj(F)/(|F|² + nsr)` of a kernel on an `H×W` grid.
#[derive(Debug, Clone)]
pub struct WienerFilter<T: Real> {
    h: usize,
    w: usize,
    nsr: f64,
    otf: Vec<Complex<T>>,
    response: Vec<Complex<T>>,
}

impl<T: Real> WienerFilter<T> {
    pub fn new(k: &BlurKernel, h: usize, w: usize, nsr: f64) -> Result<Self> {
        if !(nsr >= 0.0 && nsr.is_finite()) {
            return Err(contract_err!("nsr must be finite and nonnegative, got {nsr}"));
        }
        let otf64 = kernel_otf::<f64>(k, h, w)?;
        let response = otf64
            .iter()
            .map(|f| {
                let denom = f.norm_sqr() + nsr;
                let g = if denom > 0.0 { f.conj() / denom } else { Complex::new(0.0, 0.0) };
                Complex::new(T::of(g.re), T::of(g.im))
            })
            .collect();
        let otf = otf64
            .iter()
            .map(|f| Complex::new(T::of(f.re), T::of(f.im)))
            .collect();
        Ok(Self {
            h,
            w,
            nsr,
            otf,
            response,
        })
    }

    pub fn nsr(&self) -> f64 {
        self.nsr
    }

    pub fn response(&self) -> &[Complex<T>] {
        &self.response
    }

    /// `|F|²/(|F|² + nsr)` at every frequency.
    pub fn restoration_gain(&self) -> Vec<T> {
        self.otf
            .iter()
            .zip(&self.response)
            .map(|(f, g)| (*f * *g).re)
            .collect()
    }

    /// Filter every `H×W` plane of `y`.
    pub fn apply(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.filter(y, false)
    }

    /// Adjoint of [`apply`](Self::apply): the conjugate response.
    pub fn apply_adjoint(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.filter(y, true)
    }

    fn filter(&self, y: &Tensor<T>, conjugate: bool) -> Result<Tensor<T>> {
        let n = y.shape().len();
        if n < 2 || y.shape()[n - 2] != self.h || y.shape()[n - 1] != self.w {
            return Err(dim_err!(
                "filter built for {}x{} cannot apply to {:?}",
                self.h,
                self.w,
                y.shape()
            ));
        }
        let planes = y.numel() / (self.h * self.w);
        let data = apply_spectral_filter(
            y.data(),
            self.h,
            self.w,
            planes,
            std::slice::from_ref(&self.response),
            conjugate,
        );
        Tensor::new(y.shape(), data)
    }
}

/// Per-channel Wiener deconvolution of `y` (`[C,H,W]` or any `[..,H,W]`).
pub fn wiener_deconvolve<T: Real>(y: &Tensor<T>, k: &BlurKernel, nsr: f64) -> Result<Tensor<T>> {
    let n = y.shape().len();
    if n < 2 {
        return Err(dim_err!("expected an image, got {:?}", y.shape()));
    }
    WienerFilter::new(k, y.shape()[n - 2], y.shape()[n - 1], nsr)?.apply(y)
}

/// Deconvolve a `[C,H,W]` image captured with real (non-periodic) borders:
/// extend symmetrically by the kernel side, deconvolve, crop back.
pub fn wiener_deconvolve_symmetric<T: Real>(y: &Tensor<T>, k: &BlurKernel, nsr: f64) -> Result<Tensor<T>> {
    let (c, h, w) = chw(y)?;
    let p = k.side();
    if p >= h || p >= w {
        return Err(dim_err!("kernel side {p} too large for a {h}x{w} image"));
    }
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let padded = Tensor::from_fn(&[c, hp, wp], |i| {
        let (ch, r, q) = (i / (hp * wp), (i / wp) % hp, i % wp);
        let (sr, sq) = (mirror(r as isize - p as isize, h), mirror(q as isize - p as isize, w));
        y.data()[(ch * h + sr) * w + sq]
    });
    let out = wiener_deconvolve(&padded, k, nsr)?;
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        let (ch, r, q) = (i / (h * w), (i / w) % h, i % w);
        out.data()[(ch * hp + r + p) * wp + q + p]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::sim::{convolve, generate_kernel, ConvolveMethod};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn random(shape: &[usize], s: u64) -> Tensor<f64> {
        let mut rng = seed::rng(s);
        Tensor::from_fn(shape, |_| rng.random::<f64>())
    }

    #[test]
    fn delta_kernel_zero_nsr_is_identity() {
        let y = random(&[3, 32, 40], 1);
        let out = wiener_deconvolve(&y, &BlurKernel::delta(13).unwrap(), 0.0).unwrap();
        assert!(out.max_abs_diff(&y).unwrap() <= 1e-10);
    }

    #[test]
    fn adjoint_identity() {
        let k = generate_kernel(2, 13, 13).unwrap();
        let f = WienerFilter::<f64>::new(&k, 24, 24, 0.05).unwrap();
        let a = random(&[2, 24, 24], 3);
        let b = random(&[2, 24, 24], 4);
        let lhs: f64 = f.apply(&a).unwrap().data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.data().iter().zip(f.apply_adjoint(&b).unwrap().data()).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(1.0));
    }

    #[test]
    fn restoration_gain_bounded_and_monotone() {
        let k = generate_kernel(5, 13, 21).unwrap();
        let mut prev: Option<Vec<f64>> = None;
        for nsr in [1e-6, 1e-3, 1e-1, 10.0] {
            let g = WienerFilter::<f64>::new(&k, 32, 32, nsr).unwrap().restoration_gain();
            assert!(g.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
            if let Some(p) = prev {
                assert!(g.iter().zip(&p).all(|(a, b)| *a <= *b + 1e-15));
            }
            prev = Some(g);
        }
    }

    #[test]
    fn nsr_of_white_noise() {
        let mut rng = seed::rng(8);
        let normal = Normal::new(0.0, 0.1).unwrap();
        let y = Tensor::from_fn(&[3, 128, 128], |_| normal.sample(&mut rng));
        let est = estimate_nsr(&y).unwrap();
        let expect = 0.1 * (8.0f64 / 9.0).sqrt();
        assert!((est.sigma_n - expect).abs() / expect < 0.03, "{}", est.sigma_n);
        let map = estimate_noise_map(&y).unwrap();
        // channel averaging of three independent |residual|s keeps the mean
        let mean_expect = expect * (2.0 / std::f64::consts::PI).sqrt();
        assert!((map.mean() - mean_expect).abs() / mean_expect < 0.15);
        assert_eq!(map.shape(), &[1, 128, 128]);
    }

    #[test]
    fn nsr_extremes() {
        let flat = Tensor::full(&[3, 16, 16], 0.4);
        assert_eq!(estimate_nsr(&flat).unwrap().nsr, NSR_MAX);
        let smooth = Tensor::from_fn(&[1, 64, 64], |i| {
            let (r, q) = ((i / 64) as f64, (i % 64) as f64);
            0.5 + 0.3 * (r / 10.0).sin() * (q / 13.0).cos()
        });
        assert!(estimate_nsr(&smooth).unwrap().nsr < 1e-2);
    }

    #[test]
    fn symmetric_wrapper_inverts_interior_blur() {
        let x = Tensor::from_fn(&[1, 48, 48], |i| {
            let (r, q) = ((i / 48) as f64, (i % 48) as f64);
            0.5 + 0.2 * (r / 7.0).sin() + 0.1 * (q / 5.0).cos()
        });
        let k = BlurKernel::delta(13).unwrap();
        let out = wiener_deconvolve_symmetric(&x, &k, 0.0).unwrap();
        assert!(out.max_abs_diff(&x).unwrap() < 1e-10);
        let blurred = convolve(&x, &generate_kernel(1, 13, 13).unwrap(), ConvolveMethod::CircularFft).unwrap();
        assert_eq!(wiener_deconvolve_symmetric(&blurred, &k, 0.01).unwrap().shape(), &[1, 48, 48]);
    }

    #[test]
    fn bad_nsr_rejected() {
        let k = BlurKernel::delta(13).unwrap();
        assert!(WienerFilter::<f64>::new(&k, 16, 16, -1.0).is_err());
        assert!(WienerFilter::<f64>::new(&k, 16, 16, f64::NAN).is_err());
    }
}
