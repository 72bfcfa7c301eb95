//! Bias-corrected Adam.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{contract_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates per named parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first: BTreeMap<String, Tensor<T>>,
    pub second: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &BTreeMap<String, Tensor<T>>) -> Self {
        let zeros: BTreeMap<String, Tensor<T>> = params
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

impl Adam {
    /// One update of every parameter that has a gradient.
    pub fn step<T: Real>(
        &self,
        state: &mut AdamState<T>,
        params: &mut BTreeMap<String, Tensor<T>>,
        grads: &BTreeMap<String, Tensor<T>>,
        lr: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| contract_err!("gradient for unknown parameter {name}"))?;
            let (m, v) = (state.first.get(name), state.second.get(name));
            match (m, v) {
                (Some(m), Some(v))
                    if m.shape() == p.shape() && v.shape() == p.shape() && g.shape() == p.shape() => {}
                _ => {
                    return Err(contract_err!(
                        "optimizer state/gradient shape mismatch for {name}"
                    ))
                }
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::of(lr), T::of(self.eps));
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let m = state.first.get_mut(name).expect("checked above");
            let v = state.second.get_mut(name).expect("checked above");
            for (((pi, mi), vi), &gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi = *pi - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> (BTreeMap<String, Tensor<f64>>, BTreeMap<String, Tensor<f64>>) {
        let mut p = BTreeMap::new();
        p.insert("w".to_string(), Tensor::scalar(value));
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Tensor::scalar(grad));
        (p, g)
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        let adam = Adam::default();
        let lr = 2e-4;
        for grad in [0.3, -1.7, 1e-3] {
            let (mut p, g) = single(1.0, grad);
            let mut state = AdamState::new(&p);
            adam.step(&mut state, &mut p, &g, lr).unwrap();
            let delta = p["w"].data()[0] - 1.0;
            let expected = -lr * grad.signum();
            assert!((delta - expected).abs() <= (lr * adam.eps / grad.abs()) + 1e-15);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let adam = Adam::default();
        let (mut p, g) = single(0.5, 0.0);
        let mut state = AdamState::new(&p);
        adam.step(&mut state, &mut p, &g, 1e-3).unwrap();
        assert_eq!(p["w"].data()[0], 0.5);
    }

    #[test]
    fn two_steps_constant_gradient_bounded_by_lr() {
        // Closed form: with constant g, m̂ = g and v̂ = g² at every step, so
        // each delta is lr·|g|/(|g|+ε) <= lr.
        let adam = Adam::default();
        let lr = 1e-2;
        let (mut p, g) = single(0.0, 0.8);
        let mut state = AdamState::new(&p);
        adam.step(&mut state, &mut p, &g, lr).unwrap();
        let after1 = p["w"].data()[0];
        adam.step(&mut state, &mut p, &g, lr).unwrap();
        let delta2 = p["w"].data()[0] - after1;
        assert!(delta2.abs() <= lr + 1e-12);
        assert!((delta2 + lr * 0.8 / (0.8 + 1e-8)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let adam = Adam::default();
        let (mut p, _) = single(0.0, 0.0);
        let mut state = AdamState::new(&p);
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Tensor::<f64>::zeros(&[2]));
        assert!(adam.step(&mut state, &mut p, &g, 1e-3).is_err());
        let mut g = BTreeMap::new();
        g.insert("missing".to_string(), Tensor::<f64>::zeros(&[1]));
        assert!(adam.step(&mut state, &mut p, &g, 1e-3).is_err());
    }
}
