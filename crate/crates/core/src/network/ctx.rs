//! Parameter lookup during a forward pass.
//!
//! The same forward code declares parameters: in declaring mode a missing
//! name is created with its initializer, seeded by the parameter name.

use std::collections::BTreeMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{contract_err, Result};
use crate::seed;
use crate::tensor::{Padding, Real, Tape, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Named parameter tensors.
pub type ParamMap<T> = BTreeMap<String, Tensor<T>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    Kaiming,
    Zero,
}

fn name_seed(base: u64, name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    seed::split(base, u64::from_le_bytes(bytes))
}

fn initialize<T: Real>(shape: &[usize], init: Init, base_seed: u64, name: &str) -> Tensor<T> {
    match init {
        Init::Zero => Tensor::zeros(shape),
        Init::Kaiming => {
            let fan_in: usize = shape[1..].iter().product();
            let bound = (1.0 / fan_in as f64).sqrt();
            let mut rng = seed::rng(name_seed(base_seed, name));
            Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
        }
    }
}

enum Source<'a, T: Real> {
    Read(&'a ParamMap<T>),
    Declare(&'a mut ParamMap<T>, u64),
}

pub(crate) struct Ctx<'a, T: Real> {
    pub tape: &'a mut Tape<T>,
    params: Source<'a, T>,
    vars: BTreeMap<String, Var>,
    trainable: bool,
}

impl<'a, T: Real> Ctx<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, params: &'a ParamMap<T>, trainable: bool) -> Self {
        Self {
            tape,
            params: Source::Read(params),
            vars: BTreeMap::new(),
            trainable,
        }
    }

    pub fn declaring(tape: &'a mut Tape<T>, params: &'a mut ParamMap<T>, seed_value: u64) -> Self {
        Self {
            tape,
            params: Source::Declare(params, seed_value),
            vars: BTreeMap::new(),
            trainable: false,
        }
    }

    /// Parameter variables created on the tape so far.
    pub fn into_vars(self) -> BTreeMap<String, Var> {
        self.vars
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let t = match &mut self.params {
            Source::Read(map) => map
                .get(name)
                .ok_or_else(|| contract_err!("network state lacks parameter {name}"))?,
            Source::Declare(map, s) => {
                let s = *s;
                map.entry(name.to_string())
                    .or_insert_with(|| initialize(shape, init, s, name))
            }
        };
        if t.shape() != shape {
            return Err(contract_err!(
                "parameter {name} has shape {:?}, the architecture needs {:?}",
                t.shape(),
                shape
            ));
        }
        let v = if self.trainable {
            self.tape.leaf(t.clone())
        } else {
            self.tape.constant(t.clone())
        };
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn channels(&self, x: Var) -> usize {
        self.tape.shape(x)[1]
    }

    /// Bias-free convolution; odd kernels keep the extent, `stride` 2 with a
    /// 2×2 kernel halves it.
    pub fn conv(&mut self, name: &str, x: Var, out: usize, k: usize, stride: usize, init: Init) -> Result<Var> {
        let cin = self.channels(x);
        let w = self.param(name, &[out, cin, k, k], init)?;
        let padding = if k % 2 == 1 && k > 1 {
            Padding::Zero(k / 2)
        } else {
            Padding::None
        };
        self.tape.conv2d(x, w, stride, padding)
    }

    pub fn lrelu(&mut self, x: Var) -> Var {
        self.tape.leaky_relu(x, T::of(LEAKY_SLOPE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kaiming_bound_and_determinism() {
        let a: Tensor<f64> = initialize(&[8, 4, 3, 3], Init::Kaiming, 1, "w");
        let b: Tensor<f64> = initialize(&[8, 4, 3, 3], Init::Kaiming, 1, "w");
        let c: Tensor<f64> = initialize(&[8, 4, 3, 3], Init::Kaiming, 1, "v");
        assert_eq!(a, b);
        assert_ne!(a, c);
        // default uniform fan-in bound, 1 / sqrt(4 * 3 * 3)
        let bound = 1.0 / 6.0;
        assert!(a.data().iter().all(|v| v.abs() < bound));
        assert!(a.data().iter().any(|v| v.abs() > 0.9 * bound));
    }

    #[test]
    fn missing_parameter_is_an_error_outside_declaration() {
        let mut tape = Tape::<f64>::new();
        let mut params = ParamMap::new();
        let mut ctx = Ctx::new(&mut tape, &params, true);
        assert!(ctx.param("x", &[1], Init::Zero).is_err());
        let mut tape = Tape::<f64>::new();
        let mut ctx = Ctx::declaring(&mut tape, &mut params, 0);
        let v = ctx.param("x", &[2], Init::Zero).unwrap();
        assert_eq!(ctx.param("x", &[2], Init::Zero).unwrap(), v);
        assert!(params.contains_key("x"));
    }
}
