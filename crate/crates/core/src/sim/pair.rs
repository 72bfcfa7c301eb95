//! Clean image → degraded observation pipeline.

use super::{convolve, generate_kernel, simulate_noise, BlurKernel, ConvolveMethod, NoiseParams};
use crate::data::{sample_noise_params, SamplerConfig};
use crate::error::{dim_err, Result};
use crate::seed;
use crate::tensor::Tensor;

pub const SATURATION_FACTOR: f64 = 1.2;

/// One synthesized sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradedPair {
    pub x: Tensor<f64>,
    pub k: BlurKernel,
    /// Blurry image before noise and clipping.
    pub y_lin: Tensor<f64>,
    pub y: Tensor<f64>,
    pub params: NoiseParams,
    pub seed: u64,
}

/// `min(1.2·y, 1)`.
pub fn apply_saturation(y: &Tensor<f64>) -> Tensor<f64> {
    apply_saturation_with(y, SATURATION_FACTOR)
}

pub fn apply_saturation_with(y: &Tensor<f64>, factor: f64) -> Tensor<f64> {
    y.map(|v| (factor * v).min(1.0))
}

/// Blur, noise and saturate `x` (shape `[3,H,W]`).
///
/// Seed streams: 1 kernel, 2 noise parameters, 3 noise realization. Negative
/// values left by readout noise are clipped to 0 along with saturation.
pub fn synthesize_pair(x: &Tensor<f64>, seed_value: u64, sampler: &SamplerConfig) -> Result<DegradedPair> {
    if x.shape().len() != 3 || x.shape()[0] != 3 {
        return Err(dim_err!("expected a [3,H,W] image, got {:?}", x.shape()));
    }
    let k = generate_kernel(seed::split(seed_value, 1), sampler.kernel_min, sampler.kernel_max)?;
    let y_lin = convolve(x, &k, ConvolveMethod::CircularFft)?;
    let params = sample_noise_params(sampler, seed::split(seed_value, 2))?;
    let clamped = y_lin.map(|v| v.clamp(0.0, 1.0));
    let noisy = simulate_noise(&clamped, &params, seed::split(seed_value, 3))?;
    let y = apply_saturation_with(&noisy.map(|v| v.max(0.0)), sampler.saturation);
    Ok(DegradedPair {
        x: x.clone(),
        k,
        y_lin,
        y,
        params,
        seed: seed_value,
    })
}
