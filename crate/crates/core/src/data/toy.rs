//! Procedural night scenes for CPU-scale experiments: dim gradients, building
//! blocks with lit windows, street lamps with glow, and thin bright wires.

use rand::Rng;

use crate::seed;
use crate::tensor::Tensor;

fn warm<R: Rng>(rng: &mut R, level: f64) -> [f64; 3] {
    let tint = rng.random_range(0.0..0.35);
    [level, level * (1.0 - 0.5 * tint), level * (1.0 - tint)]
}

/// A seeded `[3,H,W]` scene with values in `[0,1]`.
pub fn toy_scene(seed_value: u64, height: usize, width: usize) -> Tensor<f64> {
    let mut rng = seed::rng(seed_value);
    let (h, w) = (height as f64, width as f64);
    let mut img = vec![[0.0f64; 3]; height * width];

    let sky_top = rng.random_range(0.02..0.12);
    let sky_bottom = rng.random_range(0.05..0.25);
    let hue = [rng.random_range(0.7..1.0), rng.random_range(0.7..1.0), 1.0];
    for y in 0..height {
        let t = y as f64 / h;
        let v = sky_top + (sky_bottom - sky_top) * t;
        for x in 0..width {
            for c in 0..3 {
                img[y * width + x][c] = v * hue[c];
            }
        }
    }

    let buildings = rng.random_range(3..7);
    for _ in 0..buildings {
        let bw = rng.random_range(0.12..0.35) * w;
        let bh = rng.random_range(0.3..0.85) * h;
        let x0 = rng.random_range(-0.1..0.95) * w;
        let y0 = h - bh;
        let body = rng.random_range(0.03..0.2);
        let shade = [body, body * rng.random_range(0.8..1.1), body * rng.random_range(0.8..1.2)];
        let cell = rng.random_range(4.0..9.0f64).max(w / 40.0);
        let lit_ratio = rng.random_range(0.2..0.7);
        let window_light = rng.random_range(0.5..1.0);
        for y in (y0.max(0.0) as usize)..height {
            for x in (x0.max(0.0) as usize)..((x0 + bw).min(w) as usize) {
                let px = &mut img[y * width + x];
                *px = shade;
                let (u, v) = ((x as f64 - x0) / cell, (y as f64 - y0) / cell);
                let (fu, fv) = (u.fract(), v.fract());
                if (0.25..0.75).contains(&fu) && (0.2..0.7).contains(&fv) {
                    // hash the window index so lit windows stay put per seed
                    let id = (u as u64).wrapping_mul(73_856_093) ^ (v as u64).wrapping_mul(19_349_663);
                    let lit = (seed::split(seed_value, id) % 1000) as f64 / 1000.0;
                    if lit < lit_ratio {
                        *px = warm(&mut rng, window_light * (0.7 + 0.3 * lit));
                    }
                }
            }
        }
    }

    let wires = rng.random_range(0..3);
    for _ in 0..wires {
        let (ya, yb) = (rng.random_range(0.1..0.6) * h, rng.random_range(0.1..0.6) * h);
        let level = rng.random_range(0.3..0.6);
        for x in 0..width {
            let y = ya + (yb - ya) * x as f64 / w;
            let yi = y as usize;
            if yi < height {
                img[yi * width + x] = [level; 3];
            }
        }
    }

    let lamps = rng.random_range(1..5);
    for _ in 0..lamps {
        let (cx, cy) = (rng.random_range(0.0..w), rng.random_range(0.1..0.9) * h);
        let radius = rng.random_range(1.0..3.5);
        let glow = rng.random_range(3.0..10.0);
        let color = warm(&mut rng, 1.0);
        for y in 0..height {
            for x in 0..width {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                let core = if d <= radius { 1.0 } else { 0.0 };
                let halo = 0.5 * (-(d - radius).max(0.0) / glow).exp();
                let px = &mut img[y * width + x];
                for c in 0..3 {
                    px[c] = (px[c] + color[c] * (core + halo)).min(1.0);
                }
            }
        }
    }

    Tensor::from_fn(&[3, height, width], |i| {
        let (c, p) = (i / (height * width), i % (height * width));
        img[p][c].clamp(0.0, 1.0)
    })
}
