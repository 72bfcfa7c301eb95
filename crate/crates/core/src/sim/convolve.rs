//! Circular 2-D convolution of images with blur kernels.
//!
//! Unlike [`Tape::conv2d`](crate::Tape::conv2d), which cross-correlates, these
//! routines apply the kernel flipped: `y[r,c] = Σ k[i,j]·x[r-(i-ci), c-(j-cj)]`
//! with indices taken modulo the image extent.

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::BlurKernel;
use crate::error::{dim_err, Result};
use crate::tensor::{fft2, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConvolveMethod {
    #[default]
    CircularFft,
    DirectCircular,
}

fn plane_dims<T: Real>(x: &Tensor<T>) -> Result<(usize, usize)> {
    let n = x.shape().len();
    if n < 2 {
        return Err(dim_err!("convolution needs an image with H,W axes, got {:?}", x.shape()));
    }
    Ok((x.shape()[n - 2], x.shape()[n - 1]))
}

/// Zero-pad `k` to `h×w` and roll it so the kernel center lands on `(0,0)`.
pub fn embed_kernel<T: Real>(k: &BlurKernel, h: usize, w: usize) -> Result<Tensor<T>> {
    if k.side() > h || k.side() > w {
        return Err(dim_err!(
            "kernel of side {} does not fit a {h}x{w} image",
            k.side()
        ));
    }
    let c = k.center();
    let mut out = Tensor::zeros(&[h, w]);
    let data = out.data_mut();
    for i in 0..k.side() {
        for j in 0..k.side() {
            let r = (i + h - c) % h;
            let q = (j + w - c) % w;
            data[r * w + q] = data[r * w + q] + T::of(k.at(i, j));
        }
    }
    Ok(out)
}

/// Optical transfer function of `k` on an `h×w` grid.
pub fn kernel_otf<T: Real>(k: &BlurKernel, h: usize, w: usize) -> Result<Vec<Complex<T>>> {
    Ok(fft2(&embed_kernel::<T>(k, h, w)?)?.data)
}

/// Circularly convolve every trailing `H×W` plane of `x` with `k`.
pub fn convolve<T: Real>(x: &Tensor<T>, k: &BlurKernel, method: ConvolveMethod) -> Result<Tensor<T>> {
    let (h, w) = plane_dims(x)?;
    match method {
        ConvolveMethod::CircularFft => {
            let otf = kernel_otf::<T>(k, h, w)?;
            let planes = x.numel() / (h * w);
            let data = crate::tensor::fft::apply_spectral_filter(x.data(), h, w, planes, &[otf], false);
            Tensor::new(x.shape(), data)
        }
        ConvolveMethod::DirectCircular => {
            if k.side() > h || k.side() > w {
                return Err(dim_err!(
                    "kernel of side {} does not fit a {h}x{w} image",
                    k.side()
                ));
            }
            let c = k.center() as isize;
            let mut out = Tensor::zeros(x.shape());
            for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(h * w)) {
                for r in 0..h {
                    for q in 0..w {
                        let mut acc = 0.0;
                        for i in 0..k.side() {
                            let rr = (r as isize - (i as isize - c)).rem_euclid(h as isize) as usize;
                            for j in 0..k.side() {
                                let qq =
                                    (q as isize - (j as isize - c)).rem_euclid(w as isize) as usize;
                                acc += k.at(i, j) * src[rr * w + qq].f64();
                            }
                        }
                        dst[r * w + q] = T::of(acc);
                    }
                }
            }
            Ok(out)
        }
    }
}
