//! Camera-shake blur kernels from seeded random-walk trajectories.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};
use crate::seed;
use crate::tensor::{Real, Tensor};

pub const MIN_SIDE: usize = 13;
pub const MAX_SIDE: usize = 35;
const TRAJECTORY_STEPS: usize = 256;
const BLUR_SIGMA: f64 = 0.5;

/// Normalized, nonnegative, odd-sided point-spread function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlurKernel {
    side: usize,
    values: Vec<f64>,
}

impl BlurKernel {
    /// Build a kernel from raw weights, renormalizing to unit sum.
    pub fn new(side: usize, values: Vec<f64>) -> Result<Self> {
        if side % 2 == 0 || side == 0 {
            return Err(contract_err!("kernel side must be odd, got {side}"));
        }
        if values.len() != side * side {
            return Err(contract_err!(
                "kernel of side {side} needs {} values, got {}",
                side * side,
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(contract_err!("kernel values must be finite and nonnegative"));
        }
        let total: f64 = values.iter().sum();
        if total <= 0.0 {
            return Err(contract_err!("kernel has zero mass"));
        }
        Ok(Self {
            side,
            values: values.into_iter().map(|v| v / total).collect(),
        })
    }

    /// The identity kernel of the given (odd) side.
    pub fn delta(side: usize) -> Result<Self> {
        let mut values = vec![0.0; side * side];
        if let Some(c) = values.get_mut((side / 2) * side + side / 2) {
            *c = 1.0;
        }
        Self::new(side, values)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn center(&self) -> usize {
        self.side / 2
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.side + col]
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(&[self.side, self.side], |i| T::of(self.values[i]))
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        match *t.shape() {
            [h, w] if h == w => Self::new(h, t.data().iter().map(|v| v.f64()).collect()),
            _ => Err(contract_err!(
                "kernel tensor must be square 2-D, got {:?}",
                t.shape()
            )),
        }
    }

    /// Kernel for a ×0.5 resampled image: center-preserving decimation with a
    /// `[1,2,1]/4` prefilter, renormalized.
    pub fn downsample(&self) -> Self {
        let c = self.center() as isize;
        let half = (self.center() + 1) / 2;
        let side = 2 * half + 1;
        let taps = [(-1isize, 0.25), (0, 0.5), (1, 0.25)];
        let mut values = vec![0.0; side * side];
        for u in 0..side {
            for v in 0..side {
                let (du, dv) = (u as isize - half as isize, v as isize - half as isize);
                let mut acc = 0.0;
                for (oy, wy) in taps {
                    for (ox, wx) in taps {
                        let r = c + 2 * du + oy;
                        let q = c + 2 * dv + ox;
                        if r >= 0 && q >= 0 && (r as usize) < self.side && (q as usize) < self.side {
                            acc += wy * wx * self.at(r as usize, q as usize);
                        }
                    }
                }
                values[u * side + v] = acc;
            }
        }
        Self::new(side, values).expect("decimated kernel keeps positive mass")
    }
}

fn check_bounds(side_min: usize, side_max: usize) -> Result<()> {
    if side_min % 2 == 0 || side_max % 2 == 0 {
        return Err(contract_err!(
            "kernel size bounds must be odd, got [{side_min}, {side_max}]"
        ));
    }
    if side_min < MIN_SIDE || side_max > MAX_SIDE || side_min > side_max {
        return Err(contract_err!(
            "kernel size bounds [{side_min}, {side_max}] must satisfy {MIN_SIDE} <= min <= max <= {MAX_SIDE}"
        ));
    }
    Ok(())
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable Gaussian blur with zero outside the canvas.
fn blur(values: &[f64], side: usize, sigma: f64) -> Vec<f64> {
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; side * side];
        for y in 0..side {
            for x in 0..side {
                let mut acc = 0.0;
                for (i, t) in taps.iter().enumerate() {
                    let d = i as isize - r;
                    let (yy, xx) = if horizontal {
                        (y as isize, x as isize + d)
                    } else {
                        (y as isize + d, x as isize)
                    };
                    if yy >= 0 && xx >= 0 && (yy as usize) < side && (xx as usize) < side {
                        acc += t * src[yy as usize * side + xx as usize];
                    }
                }
                out[y * side + x] = acc;
            }
        }
        out
    };
    pass(&pass(values, true), false)
}

/// Seeded camera-shake kernel with side drawn uniformly from the odd sizes
/// in `[side_min, side_max]`.
///
/// The trajectory is a 2-D walk whose velocity receives Gaussian increments;
/// it is centered on its centroid, scaled to the drawn support, splatted
/// bilinearly, blurred with a σ=0.5 Gaussian and normalized.
pub fn generate_kernel(seed_value: u64, side_min: usize, side_max: usize) -> Result<BlurKernel> {
    check_bounds(side_min, side_max)?;
    let mut rng = seed::rng(seed_value);
    let classes = (side_max - side_min) / 2 + 1;
    let side = side_min + 2 * rng.random_range(0..classes);

    let inertia = rng.random_range(0.6..0.95);
    let mut velocity = (0.0f64, 0.0f64);
    let mut position = (0.0f64, 0.0f64);
    let mut path = Vec::with_capacity(TRAJECTORY_STEPS);
    for _ in 0..TRAJECTORY_STEPS {
        let ax: f64 = rng.sample(StandardNormal);
        let ay: f64 = rng.sample(StandardNormal);
        velocity = (inertia * velocity.0 + ax, inertia * velocity.1 + ay);
        position = (position.0 + velocity.0, position.1 + velocity.1);
        path.push(position);
    }
    let n = path.len() as f64;
    let cx = path.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = path.iter().map(|p| p.1).sum::<f64>() / n;
    let extent = path
        .iter()
        .map(|p| (p.0 - cx).abs().max((p.1 - cy).abs()))
        .fold(0.0, f64::max);

    // keep one pixel plus the Gaussian footprint inside the canvas
    let center = (side / 2) as f64;
    let room = center - 2.0;
    let fill = rng.random_range(0.55..1.0);
    let scale = if extent > 0.0 { room * fill / extent } else { 0.0 };

    let mut canvas = vec![0.0; side * side];
    for (px, py) in path {
        let x = center + (px - cx) * scale;
        let y = center + (py - cy) * scale;
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        for (dy, wy) in [(0usize, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0usize, 1.0 - fx), (1, fx)] {
                let (row, col) = (y0 as usize + dy, x0 as usize + dx);
                if row < side && col < side {
                    canvas[row * side + col] += wy * wx;
                }
            }
        }
    }
    BlurKernel::new(side, blur(&canvas, side, BLUR_SIGMA))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_are_normalized_and_nonnegative() {
        for s in 0..50 {
            let k = generate_kernel(s, 13, 35).unwrap();
            let sum: f64 = k.values().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            assert!(k.values().iter().all(|&v| v >= 0.0));
            assert_eq!(k.side() % 2, 1);
            assert!((13..=35).contains(&k.side()));
        }
    }

    #[test]
    fn same_seed_same_kernel() {
        assert_eq!(generate_kernel(99, 13, 35).unwrap(), generate_kernel(99, 13, 35).unwrap());
        assert_ne!(generate_kernel(99, 13, 35).unwrap(), generate_kernel(100, 13, 35).unwrap());
    }

    #[test]
    fn size_census_covers_every_class() {
        let mut seen = [0usize; 12];
        for s in 0..1000 {
            let k = generate_kernel(s, 13, 35).unwrap();
            seen[(k.side() - 13) / 2] += 1;
        }
        assert!(seen.iter().all(|&c| c > 0), "{seen:?}");
    }

    #[test]
    fn even_or_out_of_range_bounds_rejected() {
        assert!(generate_kernel(0, 14, 35).is_err());
        assert!(generate_kernel(0, 13, 36).is_err());
        assert!(generate_kernel(0, 11, 35).is_err());
        assert!(generate_kernel(0, 21, 15).is_err());
        assert_eq!(generate_kernel(0, 15, 15).unwrap().side(), 15);
    }

    #[test]
    fn mass_is_spread_beyond_the_center() {
        let k = generate_kernel(3, 25, 25).unwrap();
        let peak = k.values().iter().cloned().fold(0.0, f64::max);
        assert!(peak < 0.2, "peak {peak}");
    }

    #[test]
    fn downsampled_kernel_is_centered_and_normalized() {
        let d = BlurKernel::delta(13).unwrap().downsample();
        assert_eq!(d.side(), 7);
        assert!((d.at(3, 3) - 1.0).abs() < 1e-12);
        let k = generate_kernel(8, 13, 35).unwrap().downsample();
        assert!((k.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k.side() % 2, 1);
    }

    #[test]
    fn construction_validates() {
        assert!(BlurKernel::new(4, vec![0.25; 16]).is_err());
        assert!(BlurKernel::new(3, vec![0.0; 9]).is_err());
        assert!(BlurKernel::new(3, vec![-1.0; 9]).is_err());
        let k = BlurKernel::new(3, vec![2.0; 9]).unwrap();
        assert!((k.at(1, 1) - 1.0 / 9.0).abs() < 1e-15);
    }
}
