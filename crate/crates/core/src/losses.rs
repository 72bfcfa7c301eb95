//! Training objectives: multi-scale deblurring, enhancement and reblurring
//! consistency.

use std::rc::Rc;

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, dim_err, Result};
use crate::metrics::ssim_var;
use crate::tensor::{Real, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum L2Kind {
    /// Mean squared difference.
    #[default]
    MeanSquared,
    /// Root of the mean squared difference.
    Root,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub deblur: f64,
    pub enhance: f64,
    pub reblur: f64,
    /// L1, L2, TV, SSIM.
    pub deblur_gamma: [f64; 4],
    /// L1, L2, TV.
    pub enhance_gamma: [f64; 3],
    pub l2: L2Kind,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            deblur: 1.0,
            enhance: 0.5,
            reblur: 0.5,
            deblur_gamma: [0.4, 0.2, 0.2, 0.2],
            enhance_gamma: [0.5, 0.3, 0.2],
            l2: L2Kind::MeanSquared,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.deblur, self.enhance, self.reblur]
            .into_iter()
            .chain(self.deblur_gamma)
            .chain(self.enhance_gamma);
        for w in all {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(contract_err!("loss weights must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

fn same_shape<T: Real>(tape: &Tape<T>, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(dim_err!(
            "loss operands differ in shape: {:?} vs {:?}",
            tape.shape(a),
            tape.shape(b)
        ));
    }
    Ok(())
}

pub fn l1<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    same_shape(tape, a, b)?;
    let d = tape.sub(a, b)?;
    Ok(tape.mean_abs(d))
}

pub fn l2<T: Real>(tape: &mut Tape<T>, a: Var, b: Var, kind: L2Kind) -> Result<Var> {
    same_shape(tape, a, b)?;
    let d = tape.sub(a, b)?;
    let sq = tape.square(d);
    let m = tape.mean(sq);
    Ok(match kind {
        L2Kind::MeanSquared => m,
        L2Kind::Root => tape.sqrt(m),
    })
}

/// Anisotropic total variation, pooled over all forward differences.
pub fn tv<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    tape.tv(x)
}

/// `1 − SSIM`.
pub fn ssim_loss<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let s = ssim_var(tape, a, b)?;
    let neg = tape.scalar_mul(s, -T::one());
    Ok(tape.add_scalar(neg, T::one()))
}

fn weighted_sum<T: Real>(tape: &mut Tape<T>, terms: &[(f64, Var)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(w, v) in terms {
        let scaled = tape.scalar_mul(v, T::of(w));
        acc = Some(match acc {
            None => scaled,
            Some(a) => tape.add(a, scaled)?,
        });
    }
    acc.ok_or_else(|| contract_err!("weighted sum of no terms"))
}

/// Mean over scales of `γ₁L1 + γ₂L2 + γ₃tv(x̂) + γ₄(1 − SSIM)`.
///
/// `outputs[s]` and `targets[s]` are the restoration and ground truth at
/// scale `s`.
pub fn deblur_loss<T: Real>(
    tape: &mut Tape<T>,
    outputs: &[Var],
    targets: &[Var],
    weights: &LossWeights,
) -> Result<Var> {
    if outputs.len() != targets.len() || outputs.is_empty() {
        return Err(contract_err!(
            "deblur loss got {} outputs for {} targets",
            outputs.len(),
            targets.len()
        ));
    }
    let g = weights.deblur_gamma;
    let mut per_scale = Vec::with_capacity(outputs.len());
    for (&out, &target) in outputs.iter().zip(targets) {
        let a = l1(tape, out, target)?;
        let b = l2(tape, out, target, weights.l2)?;
        let c = tv(tape, out)?;
        let d = ssim_loss(tape, out, target)?;
        per_scale.push(weighted_sum(tape, &[(g[0], a), (g[1], b), (g[2], c), (g[3], d)])?);
    }
    let n = per_scale.len() as f64;
    let terms: Vec<(f64, Var)> = per_scale.into_iter().map(|v| (1.0 / n, v)).collect();
    weighted_sum(tape, &terms)
}

/// `γ₁L1(ŷ, x∗k) + γ₂L2(ŷ, x∗k) + γ₃tv(ŷ)`.
pub fn enhance_loss<T: Real>(tape: &mut Tape<T>, enhanced: Var, blurred_clean: Var, weights: &LossWeights) -> Result<Var> {
    let g = weights.enhance_gamma;
    let a = l1(tape, enhanced, blurred_clean)?;
    let b = l2(tape, enhanced, blurred_clean, weights.l2)?;
    let c = tv(tape, enhanced)?;
    weighted_sum(tape, &[(g[0], a), (g[1], b), (g[2], c)])
}

/// `L1(x̂∗k, x∗k)` with circular convolution given by per-item transfer
/// functions `otfs`.
pub fn reblur_loss<T: Real>(
    tape: &mut Tape<T>,
    restored: Var,
    blurred_clean: Var,
    otfs: Rc<Vec<Vec<Complex<T>>>>,
) -> Result<Var> {
    let reblurred = tape.spectral_filter(restored, otfs)?;
    l1(tape, reblurred, blurred_clean)
}

/// Per-term values of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub deblur: f64,
    pub enhance: Option<f64>,
    pub reblur: Option<f64>,
    pub total: f64,
}

/// `w_d·deblur + w_e·enhance + w_r·reblur`; absent terms are dropped.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    deblur: Var,
    enhance: Option<Var>,
    reblur: Option<Var>,
    weights: &LossWeights,
) -> Result<Var> {
    let mut terms = vec![(weights.deblur, deblur)];
    if let Some(e) = enhance {
        terms.push((weights.enhance, e));
    }
    if let Some(r) = reblur {
        terms.push((weights.reblur, r));
    }
    weighted_sum(tape, &terms)
}
