//! Photon shot noise, clipped dark current, readout noise and row streaks.

use rand_distr::{Distribution, Normal};

use super::{poisson, NoiseParams};
use crate::error::{contract_err, dim_err, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Mean and variance of `D = max(0, n − N_d)` with `n ~ Poisson(N_d)`,
/// by summing the distribution.
pub fn dark_moments(n_d: f64) -> (f64, f64) {
    if n_d <= 0.0 {
        return (0.0, 0.0);
    }
    let (mut m1, mut m2) = (0.0, 0.0);
    for (n, p) in poisson::pmf_iter(n_d) {
        let d = (n as f64 - n_d).max(0.0);
        m1 += d * p;
        m2 += d * d * p;
    }
    (m1, m2 - m1 * m1)
}

fn channels(y: &Tensor<f64>) -> Result<(usize, usize, usize)> {
    match *y.shape() {
        [c, h, w] if (1..=3).contains(&c) => Ok((c, h, w)),
        _ => Err(dim_err!(
            "noise simulation expects a [C,H,W] image with C <= 3, got {:?}",
            y.shape()
        )),
    }
}

/// One noisy realization of the sensor model applied to `y_lin`.
pub fn simulate_noise(y_lin: &Tensor<f64>, params: &NoiseParams, seed_value: u64) -> Result<Tensor<f64>> {
    params.validate()?;
    let (c, h, w) = channels(y_lin)?;
    if y_lin.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(contract_err!("noise simulation needs intensities in [0,1]"));
    }
    // streak gains and pixel noise come from separate streams
    let mut streak_rng = seed::rng(seed::split(seed_value, 0));
    let mut rng = seed::rng(seed::split(seed_value, 1));
    let read = Normal::new(0.0, params.sigma_r).expect("sigma_r validated");
    let streak = Normal::new(1.0, params.sigma_beta).expect("sigma_beta validated");
    let mut out = Tensor::zeros(y_lin.shape());
    let src = y_lin.data();
    let dst = out.data_mut();
    for ch in 0..c {
        let scale = params.k(ch) / params.q;
        for r in 0..h {
            let beta = if params.sigma_beta > 0.0 { streak.sample(&mut streak_rng) } else { 1.0 };
            for q in 0..w {
                let i = (ch * h + r) * w + q;
                let np = params.q * src[i] / params.attenuation;
                let s = poisson::sample(&mut rng, np) as f64;
                let d = (poisson::sample(&mut rng, params.n_d) as f64 - params.n_d).max(0.0);
                let rd = if params.sigma_r > 0.0 { read.sample(&mut rng) } else { 0.0 };
                let mut v = scale * beta * (s + d + rd);
                if params.quantize {
                    v = (v * 255.0).round() / 255.0;
                }
                dst[i] = v;
            }
        }
    }
    Ok(out)
}

/// Pixelwise mean of [`simulate_noise`] (before quantization).
pub fn expected_value(y_lin: &Tensor<f64>, params: &NoiseParams) -> Result<Tensor<f64>> {
    params.validate()?;
    let (_, h, w) = channels(y_lin)?;
    let (ed, _) = dark_moments(params.n_d);
    Ok(Tensor::from_fn(y_lin.shape(), |i| {
        let k = params.k(i / (h * w));
        k * (params.q * y_lin.data()[i] / params.attenuation + ed) / params.q
    }))
}

/// Pixelwise variance of [`simulate_noise`] (before quantization), with the
/// streak gain folded in: `(K/Q)²[(1+σ_β²)(N_p+Var D+σ_r²) + σ_β²(N_p+E D)²]`.
pub fn variance(y_lin: &Tensor<f64>, params: &NoiseParams) -> Result<Tensor<f64>> {
    params.validate()?;
    let (_, h, w) = channels(y_lin)?;
    let (ed, vd) = dark_moments(params.n_d);
    let sb2 = params.sigma_beta * params.sigma_beta;
    Ok(Tensor::from_fn(y_lin.shape(), |i| {
        let k = params.k(i / (h * w)) / params.q;
        let np = params.q * y_lin.data()[i] / params.attenuation;
        let inner = np + vd + params.sigma_r * params.sigma_r;
        let mean = np + ed;
        k * k * ((1.0 + sb2) * inner + sb2 * mean * mean)
    }))
}
