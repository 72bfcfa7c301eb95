//! Parameter sampling, image I/O, patch batching and pair directories.

mod batch;
mod image;
mod pairs;
mod toy;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};
use crate::seed;
use crate::sim::{NoiseParams, DEFAULT_Q, MAX_SIDE, MIN_SIDE, SATURATION_FACTOR};

pub use batch::{crop, make_batch, MIN_CROP_STD};
pub use image::{load_image, save_image, BitDepth};
pub use pairs::{list_clean_images, read_pair, write_pair};
pub use toy::toy_scene;

/// Gains used by the fixed-gain evaluation mode.
pub const EVAL_GAINS: [f64; 3] = [4.0, 8.0, 16.0];

/// Inclusive uniform range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.lo..=self.hi).contains(&v)
    }
}

/// Distributions for synthesizing training and evaluation pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_d: Range,
    pub sigma_r: Range,
    pub sigma_beta: Range,
    pub gain: Range,
    /// Evaluate at one camera gain instead of sampling it.
    pub fixed_gain: Option<f64>,
    /// `M` when set; otherwise `M = K`.
    pub attenuation: Option<f64>,
    pub q: f64,
    pub saturation: f64,
    pub kernel_min: usize,
    pub kernel_max: usize,
    pub patch: usize,
    pub batch: usize,
    /// Per-channel gain jitter of ±5%.
    pub channel_jitter: bool,
    pub quantize: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_d: Range::new(2.0, 8.0),
            sigma_r: Range::new(0.5, 4.0),
            sigma_beta: Range::new(0.01, 0.03),
            gain: Range::new(4.0, 16.0),
            fixed_gain: None,
            attenuation: None,
            q: DEFAULT_Q,
            saturation: SATURATION_FACTOR,
            kernel_min: MIN_SIDE,
            kernel_max: MAX_SIDE,
            patch: 256,
            batch: 8,
            channel_jitter: false,
            quantize: false,
        }
    }
}

impl SamplerConfig {
    /// Defaults scaled down for CPU-sized experiments: 64×64 patches.
    pub fn toy() -> Self {
        Self {
            patch: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("n_d", self.n_d),
            ("sigma_r", self.sigma_r),
            ("sigma_beta", self.sigma_beta),
            ("gain", self.gain),
        ] {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi) {
                return Err(contract_err!("range {name} = [{}, {}] is not ordered", r.lo, r.hi));
            }
        }
        if self.patch < self.kernel_max || self.batch == 0 {
            return Err(contract_err!(
                "patch {} must hold the largest kernel ({}) and batch must be positive",
                self.patch,
                self.kernel_max
            ));
        }
        if self.saturation <= 0.0 {
            return Err(contract_err!("saturation factor must be positive"));
        }
        Ok(())
    }
}

/// Draw one parameter set. Streams: `N_d, σ_r, σ_β, K`, then channel jitter.
pub fn sample_noise_params(sampler: &SamplerConfig, seed_value: u64) -> Result<NoiseParams> {
    sampler.validate()?;
    let mut rng = seed::rng(seed_value);
    let n_d = sampler.n_d.sample(&mut rng);
    let sigma_r = sampler.sigma_r.sample(&mut rng);
    let sigma_beta = sampler.sigma_beta.sample(&mut rng);
    let drawn = sampler.gain.sample(&mut rng);
    let gain = sampler.fixed_gain.unwrap_or(drawn);
    let mut params = NoiseParams::new(n_d, sigma_r, sigma_beta, gain);
    if let Some(m) = sampler.attenuation {
        params.attenuation = m;
    }
    params.q = sampler.q;
    params.quantize = sampler.quantize;
    if sampler.channel_jitter {
        for g in &mut params.channel_gain {
            *g = rng.random_range(0.95..=1.05);
        }
    }
    params.validate()?;
    Ok(params)
}
