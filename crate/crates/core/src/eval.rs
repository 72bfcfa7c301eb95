//! Scoring a network against the image-space Wiener baseline.

use serde::{Deserialize, Serialize};

use crate::data::{make_batch, SamplerConfig};
use crate::error::{contract_err, Result};
use crate::metrics::{psnr, ssim, PSNR_CAP};
use crate::network::{Network, Observation};
use crate::seed;
use crate::sim::DegradedPair;
use crate::tensor::Tensor;
use crate::wiener::{estimate_nsr, wiener_deconvolve};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub gain: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub baseline_psnr: f64,
    pub baseline_ssim: f64,
}

/// Means over the images sharing one camera gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainGroup {
    pub gain: f64,
    pub count: usize,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
    pub baseline_psnr_mean: f64,
    pub baseline_ssim_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
    pub baseline_psnr_mean: f64,
    pub baseline_ssim_mean: f64,
    pub per_image: Vec<ImageScore>,
    pub gain: Vec<GainGroup>,
}

/// Image-space Wiener deconvolution with the estimated noise-to-signal ratio.
pub fn wiener_baseline(pair: &DegradedPair) -> Result<Tensor<f64>> {
    let nsr = estimate_nsr(&pair.y)?.nsr;
    wiener_deconvolve(&pair.y, &pair.k, nsr)
}

fn clamp01(t: &Tensor<f64>) -> Tensor<f64> {
    t.map(|v| v.clamp(0.0, 1.0))
}

fn capped_psnr(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    Ok(psnr(a, b, 1.0)?.min(PSNR_CAP))
}

/// Network restoration of one pair, clamped to `[0,1]`.
pub fn restore_pair(net: &Network<f32>, pair: &DegradedPair) -> Result<Tensor<f64>> {
    let s = pair.y.shape().to_vec();
    let y = pair.y.cast::<f32>().reshape(&[1, s[0], s[1], s[2]])?;
    let out = net.restore(&Observation::new(y, vec![pair.k.clone()]))?;
    Ok(clamp01(&out.cast::<f64>().reshape(&s)?))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// PSNR (capped at 100 dB) and SSIM of the network and of the Wiener
/// baseline, both clamped to `[0,1]`, per image and grouped by gain.
pub fn evaluate(net: &Network<f32>, pairs: &[(String, DegradedPair)]) -> Result<Report> {
    if pairs.is_empty() {
        return Err(contract_err!("nothing to evaluate"));
    }
    let per_image = pairs
        .iter()
        .map(|(id, pair)| {
            let restored = restore_pair(net, pair)?;
            let baseline = clamp01(&wiener_baseline(pair)?);
            Ok(ImageScore {
                id: id.clone(),
                gain: pair.params.gain,
                psnr: capped_psnr(&restored, &pair.x)?,
                ssim: ssim(&restored, &pair.x)?,
                baseline_psnr: capped_psnr(&baseline, &pair.x)?,
                baseline_ssim: ssim(&baseline, &pair.x)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut gains: Vec<f64> = per_image.iter().map(|s| s.gain).collect();
    gains.sort_by(f64::total_cmp);
    gains.dedup();
    let gain = gains
        .into_iter()
        .map(|g| {
            let group: Vec<&ImageScore> = per_image.iter().filter(|s| s.gain == g).collect();
            GainGroup {
                gain: g,
                count: group.len(),
                psnr_mean: mean(group.iter().map(|s| s.psnr)),
                ssim_mean: mean(group.iter().map(|s| s.ssim)),
                baseline_psnr_mean: mean(group.iter().map(|s| s.baseline_psnr)),
                baseline_ssim_mean: mean(group.iter().map(|s| s.baseline_ssim)),
            }
        })
        .collect();
    Ok(Report {
        schema: REPORT_SCHEMA,
        psnr_mean: mean(per_image.iter().map(|s| s.psnr)),
        ssim_mean: mean(per_image.iter().map(|s| s.ssim)),
        baseline_psnr_mean: mean(per_image.iter().map(|s| s.baseline_psnr)),
        baseline_ssim_mean: mean(per_image.iter().map(|s| s.baseline_ssim)),
        per_image,
        gain,
    })
}

/// One pair per clean image: a seeded `patch`-sized crop, blurred and
/// degraded with `sampler`. Image `i` uses sub-seed `i`.
pub fn synthesize_set(images: &[Tensor<f64>], sampler: &SamplerConfig, seed_value: u64) -> Result<Vec<DegradedPair>> {
    let single = SamplerConfig {
        batch: 1,
        ..sampler.clone()
    };
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let mut batch = make_batch(std::slice::from_ref(img), &single, seed::split(seed_value, i as u64))?;
            Ok(batch.remove(0))
        })
        .collect()
}
