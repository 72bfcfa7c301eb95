//! Poisson variates: sequential inversion for small means, PTRS transformed
//! rejection with squeeze (Hörmann) above.

use rand::Rng;

const INVERSION_LIMIT: f64 = 10.0;

/// `ln(k!)`, exact for small `k`, Stirling series beyond.
pub fn ln_factorial(k: u64) -> f64 {
    if k < 16 {
        (2..=k).map(|i| (i as f64).ln()).sum()
    } else {
        let x = k as f64;
        let inv = 1.0 / x;
        let inv2 = inv * inv;
        x * x.ln() - x + 0.5 * (std::f64::consts::TAU * x).ln()
            + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
    }
}

/// Draw from `Poisson(lambda)`; `lambda <= 0` yields 0.
pub fn sample<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda < INVERSION_LIMIT {
        let u: f64 = rng.random();
        let mut p = (-lambda).exp();
        let mut cdf = p;
        let mut k = 0u64;
        while u > cdf {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
            if p < 1e-300 && cdf >= 1.0 - 1e-15 {
                break;
            }
        }
        return k;
    }
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -lambda + k * loglam - ln_factorial(k as u64);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// Iterates `(n, P(n; lambda))` until the remaining tail is negligible.
pub fn pmf_iter(lambda: f64) -> impl Iterator<Item = (u64, f64)> {
    let limit = (lambda + 40.0 * lambda.sqrt() + 60.0).ceil() as u64;
    let mut p = (-lambda).exp();
    (0..=limit).map(move |n| {
        if n > 0 {
            p *= lambda / n as f64;
        }
        (n, p)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn ln_factorial_matches_product() {
        let mut acc = 0.0f64;
        for k in 1..40u64 {
            acc += (k as f64).ln();
            assert!((ln_factorial(k) - acc).abs() < 1e-10, "k={k}");
        }
    }

    #[test]
    fn moments_across_regimes() {
        for &lambda in &[0.3, 4.0, 9.5, 10.0, 31.25, 250.0] {
            let mut rng = seed::rng(11);
            let n = 200_000;
            let draws: Vec<f64> = (0..n).map(|_| sample(&mut rng, lambda) as f64).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((mean - lambda).abs() < 5.0 * (lambda / n as f64).sqrt() + 1e-9, "lambda={lambda} mean={mean}");
            assert!((var / lambda - 1.0).abs() < 0.02, "lambda={lambda} var={var}");
        }
    }

    #[test]
    fn empirical_pmf_matches_at_ptrs_regime() {
        let lambda = 12.0;
        let mut rng = seed::rng(5);
        let n = 400_000;
        let mut counts = vec![0usize; 60];
        for _ in 0..n {
            counts[(sample(&mut rng, lambda) as usize).min(59)] += 1;
        }
        for (k, p) in pmf_iter(lambda).take(30) {
            let emp = counts[k as usize] as f64 / n as f64;
            assert!((emp - p).abs() < 5.0 * (p / n as f64).sqrt() + 2e-4, "k={k} emp={emp} p={p}");
        }
    }

    #[test]
    fn pmf_sums_to_one() {
        for lambda in [0.5, 4.0, 8.0, 100.0] {
            let s: f64 = pmf_iter(lambda).map(|(_, p)| p).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
