//! Image quality metrics.

use crate::error::{dim_err, Result};
use crate::tensor::{Padding, Real, Tape, Tensor, Var};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Value reported in tables for a perfect reconstruction.
pub const PSNR_CAP: f64 = 100.0;

/// `10·log10(peak²/MSE)`; identical inputs give `+∞`.
pub fn psnr<T: Real>(estimate: &Tensor<T>, reference: &Tensor<T>, peak: f64) -> Result<f64> {
    if estimate.shape() != reference.shape() || estimate.numel() == 0 {
        return Err(dim_err!(
            "psnr needs equal non-empty shapes, got {:?} and {:?}",
            estimate.shape(),
            reference.shape()
        ));
    }
    let mse = estimate
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a.f64() - b.f64()).powi(2))
        .sum::<f64>()
        / estimate.numel() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

/// Normalized 11×11 Gaussian window with σ = 1.5.
pub fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let taps: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    let mut out = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &taps {
        for b in &taps {
            out.push(a * b / (total * total));
        }
    }
    out
}

/// Mean SSIM of two `[B,C,H,W]` variables on a tape (valid windows only,
/// dynamic range 1), averaged over items, channels and positions.
pub fn ssim_var<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let shape = tape.shape(a).to_vec();
    if shape.len() != 4 || tape.shape(b) != shape.as_slice() {
        return Err(dim_err!(
            "ssim needs two equal [B,C,H,W] shapes, got {:?} and {:?}",
            shape,
            tape.shape(b)
        ));
    }
    let (bsz, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(dim_err!("ssim needs H,W >= {SSIM_WINDOW}, got {h}x{w}"));
    }
    let planes = [bsz * c, 1, h, w];
    let window = Tensor::from_fn(&[1, 1, SSIM_WINDOW, SSIM_WINDOW], {
        let g = gaussian_window();
        move |i| T::of(g[i])
    });
    let window = tape.constant(window);
    let x = tape.reshape(a, &planes)?;
    let y = tape.reshape(b, &planes)?;
    let blur = |tape: &mut Tape<T>, v: Var| tape.conv2d(v, window, 1, Padding::None);

    let xx = tape.mul(x, x)?;
    let yy = tape.mul(y, y)?;
    let xy = tape.mul(x, y)?;
    let mu_x = blur(tape, x)?;
    let mu_y = blur(tape, y)?;
    let e_xx = blur(tape, xx)?;
    let e_yy = blur(tape, yy)?;
    let e_xy = blur(tape, xy)?;

    let mu_xx = tape.mul(mu_x, mu_x)?;
    let mu_yy = tape.mul(mu_y, mu_y)?;
    let mu_xy = tape.mul(mu_x, mu_y)?;
    let var_x = tape.sub(e_xx, mu_xx)?;
    let var_y = tape.sub(e_yy, mu_yy)?;
    let cov = tape.sub(e_xy, mu_xy)?;

    let (c1, c2) = (T::of(K1 * K1), T::of(K2 * K2));
    let two = T::of(2.0);
    let l_num = tape.scalar_mul(mu_xy, two);
    let l_num = tape.add_scalar(l_num, c1);
    let c_num = tape.scalar_mul(cov, two);
    let c_num = tape.add_scalar(c_num, c2);
    let l_den = tape.add(mu_xx, mu_yy)?;
    let l_den = tape.add_scalar(l_den, c1);
    let c_den = tape.add(var_x, var_y)?;
    let c_den = tape.add_scalar(c_den, c2);
    let num = tape.mul(l_num, c_num)?;
    let den = tape.mul(l_den, c_den)?;
    let map = tape.div(num, den)?;
    Ok(tape.mean(map))
}

/// Mean SSIM of two images of shape `[C,H,W]` or `[B,C,H,W]`.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let lift = |t: &Tensor<f64>| match t.shape().len() {
        3 => t.clone().reshape(&[1, t.shape()[0], t.shape()[1], t.shape()[2]]),
        4 => Ok(t.clone()),
        _ => Err(dim_err!("ssim expects [C,H,W] or [B,C,H,W], got {:?}", t.shape())),
    };
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(lift(&a.cast())?);
    let y = tape.constant(lift(&b.cast())?);
    let s = ssim_var(&mut tape, x, y)?;
    Ok(tape.item(s))
}
