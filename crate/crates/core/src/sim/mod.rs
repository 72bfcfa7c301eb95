//! Low-light degradation simulator: camera-shake blur, sensor noise and
//! saturation.

mod convolve;
mod kernel;
mod noise;
mod pair;
pub mod poisson;

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};

pub use convolve::{convolve, embed_kernel, kernel_otf, ConvolveMethod};
pub use kernel::{generate_kernel, BlurKernel, MAX_SIDE, MIN_SIDE};
pub use noise::{dark_moments, expected_value, simulate_noise, variance};
pub use pair::{apply_saturation, synthesize_pair, DegradedPair, SATURATION_FACTOR};

/// Default electrons at unit intensity.
pub const DEFAULT_Q: f64 = 500.0;

/// Sensor model parameters for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Expected dark electrons per pixel.
    pub n_d: f64,
    /// Readout noise std in electrons.
    pub sigma_r: f64,
    /// Std of the row-wise streak gain.
    pub sigma_beta: f64,
    /// Total camera gain.
    pub gain: f64,
    /// Per-channel multipliers on `gain`; all ones unless jitter is enabled.
    pub channel_gain: [f64; 3],
    /// Brightness attenuation `M`.
    pub attenuation: f64,
    /// Electrons at unit intensity `Q`.
    pub q: f64,
    /// Round the gained signal to 8-bit levels.
    #[serde(default)]
    pub quantize: bool,
}

impl NoiseParams {
    /// Parameters with `M = K`, unit channel gains and the default `Q`.
    pub fn new(n_d: f64, sigma_r: f64, sigma_beta: f64, gain: f64) -> Self {
        Self {
            n_d,
            sigma_r,
            sigma_beta,
            gain,
            channel_gain: [1.0; 3],
            attenuation: gain,
            q: DEFAULT_Q,
            quantize: false,
        }
    }

    /// Gain applied to channel `c`.
    pub fn k(&self, c: usize) -> f64 {
        self.gain * self.channel_gain[c]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.n_d >= 0.0
            && self.sigma_r >= 0.0
            && (0.0..1.0).contains(&self.sigma_beta)
            && self.gain > 0.0
            && self.channel_gain.iter().all(|&g| g > 0.0 && g.is_finite())
            && self.attenuation >= 1.0
            && self.q > 0.0
            && [self.n_d, self.sigma_r, self.gain, self.attenuation, self.q]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(contract_err!("invalid noise parameters {self:?}"))
        }
    }
}
