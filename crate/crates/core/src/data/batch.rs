use rand::Rng;

use super::SamplerConfig;
use crate::error::{contract_err, dim_err, Result};
use crate::seed;
use crate::sim::{synthesize_pair, DegradedPair};
use crate::tensor::Tensor;

/// Crops whose standard deviation falls below this are redrawn.
pub const MIN_CROP_STD: f64 = 1e-3;
const CROP_RETRIES: usize = 10;

/// Square `size×size` window of a `[C,H,W]` image.
pub fn crop(img: &Tensor<f64>, top: usize, left: usize, size: usize) -> Result<Tensor<f64>> {
    let (c, h, w) = match *img.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(dim_err!("crop expects [C,H,W], got {:?}", img.shape())),
    };
    if top + size > h || left + size > w {
        return Err(dim_err!(
            "crop {size}x{size} at ({top},{left}) exceeds image {h}x{w}"
        ));
    }
    Ok(Tensor::from_fn(&[c, size, size], |i| {
        let (ch, r, q) = (i / (size * size), (i / size) % size, i % size);
        img.data()[(ch * h + top + r) * w + left + q]
    }))
}

fn std_dev(t: &Tensor<f64>) -> f64 {
    let m = t.mean();
    (t.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / t.numel() as f64).sqrt()
}

/// `sampler.batch` synthesized patches drawn from `images`.
///
/// Sample `i` uses seed stream `i`: image choice and crop from it, then the
/// pair synthesized under a child seed.
pub fn make_batch(images: &[Tensor<f64>], sampler: &SamplerConfig, seed_value: u64) -> Result<Vec<DegradedPair>> {
    sampler.validate()?;
    if images.is_empty() {
        return Err(contract_err!("make_batch needs at least one image"));
    }
    let p = sampler.patch;
    for img in images {
        let s = img.shape();
        if s.len() != 3 || s[1] < p || s[2] < p {
            return Err(dim_err!("image {s:?} is smaller than the {p}x{p} patch"));
        }
    }
    (0..sampler.batch as u64)
        .map(|i| {
            let item_seed = seed::split(seed_value, i);
            let mut rng = seed::rng(item_seed);
            let mut patch = None;
            for _ in 0..=CROP_RETRIES {
                let img = &images[rng.random_range(0..images.len())];
                let top = rng.random_range(0..=img.shape()[1] - p);
                let left = rng.random_range(0..=img.shape()[2] - p);
                let c = crop(img, top, left, p)?;
                let flat = std_dev(&c) < MIN_CROP_STD;
                patch = Some(c);
                if !flat {
                    break;
                }
            }
            let patch = patch.expect("at least one crop drawn");
            synthesize_pair(&patch, seed::split(item_seed, u64::MAX), sampler)
        })
        .collect()
}
