//! Central finite-difference checks of tape gradients in 64-bit floats.
//!
//! An operation producing a tensor is reduced to a scalar by a fixed random
//! projection `Σ w ⊙ op(x)`. Agreement is measured per check as
//! `‖g − ĝ‖₂ / max(‖g‖₂, ‖ĝ‖₂, 1e-7)` over the compared entries.

use std::rc::Rc;

use rand::Rng;

use crate::error::{contract_err, Result};
use crate::losses::{self, L2Kind, LossWeights};
use crate::network::{BranchMode, FusionMode, Network, NetworkConfig};
use crate::seed;
use crate::sim::{kernel_otf, BlurKernel};
use crate::tensor::{Interpolation, Padding, Tape, Tensor, Var};
use crate::train::{objective, Batch, ObjectiveConfig};

pub const STEP: f64 = 1e-6;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
const NORM_FLOOR: f64 = 1e-7;

/// Outcome of one gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub shape: Vec<usize>,
    pub entries: usize,
    pub rel_error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.rel_error <= self.tolerance
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied())
        .max(norm(&mut numeric.iter().copied()))
        .max(NORM_FLOOR);
    diff / scale
}

type ScalarFn<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

fn evaluate(inputs: &[Tensor<f64>], f: &ScalarFn) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(contract_err!("gradient check needs a scalar function"));
    }
    Ok(tape.item(out))
}

/// Analytic gradients of a scalar function with respect to every input.
pub fn analytic_gradients(inputs: &[Tensor<f64>], f: &ScalarFn) -> Result<Vec<Tensor<f64>>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    Ok(vars
        .iter()
        .map(|&v| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
        })
        .collect())
}

/// `(f(x + h·e) − f(x − h·e)) / 2h` for entry `index` of input `which`.
pub fn central_difference(inputs: &[Tensor<f64>], f: &ScalarFn, which: usize, index: usize) -> Result<f64> {
    let mut shifted = inputs.to_vec();
    let x0 = inputs[which].data()[index];
    shifted[which].data_mut()[index] = x0 + STEP;
    let plus = evaluate(&shifted, f)?;
    shifted[which].data_mut()[index] = x0 - STEP;
    let minus = evaluate(&shifted, f)?;
    Ok((plus - minus) / (2.0 * STEP))
}

/// Compare every entry of every input.
pub fn check_all(inputs: &[Tensor<f64>], f: &ScalarFn) -> Result<(f64, usize)> {
    let analytic = analytic_gradients(inputs, f)?;
    let (mut a, mut n) = (Vec::new(), Vec::new());
    for (which, g) in analytic.iter().enumerate() {
        for index in 0..g.numel() {
            a.push(g.data()[index]);
            n.push(central_difference(inputs, f, which, index)?);
        }
    }
    Ok((relative_error(&a, &n), a.len()))
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed_value: u64) -> Tensor<f64> {
    let mut rng = seed::rng(seed_value);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// `Σ w ⊙ v` with fixed random `w`.
fn project(tape: &mut Tape<f64>, v: Var, seed_value: u64) -> Result<Var> {
    let w = uniform(tape.shape(v), -1.0, 1.0, seed_value);
    let w = tape.constant(w);
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

type OpFn = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

struct OpCase {
    name: &'static str,
    /// Input shapes for a base `[B,C,H,W]`.
    inputs: fn(&[usize]) -> Vec<Vec<usize>>,
    domain: (f64, f64),
    large: bool,
    f: OpFn,
}

fn same(s: &[usize]) -> Vec<Vec<usize>> {
    vec![s.to_vec()]
}

fn pair(s: &[usize]) -> Vec<Vec<usize>> {
    vec![s.to_vec(), s.to_vec()]
}

fn conv_inputs(k: usize) -> impl Fn(&[usize]) -> Vec<Vec<usize>> {
    move |s: &[usize]| vec![s.to_vec(), vec![3, s[1], k, k]]
}

fn spectra_for(tape: &Tape<f64>, v: Var, seed_value: u64) -> Result<Rc<Vec<Vec<rustfft::num_complex::Complex<f64>>>>> {
    let (b, _, h, w) = tape.value(v).dims4()?;
    let side = if h.min(w) >= 7 { 5 } else { 3 };
    let spectra = (0..b)
        .map(|i| {
            let values = uniform(&[side * side], 0.1, 1.0, seed::split(seed_value, i as u64));
            let k = BlurKernel::new(side, values.into_data())?;
            kernel_otf::<f64>(&k, h, w)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Rc::new(spectra))
}

fn op_cases() -> Vec<OpCase> {
    let case = |name, inputs, domain, f| OpCase {
        name,
        inputs,
        domain,
        large: false,
        f,
    };
    let loss = |name, inputs, f| OpCase {
        name,
        inputs,
        domain: (0.0, 1.0),
        large: true,
        f,
    };
    vec![
        case("add", pair, (-1.0, 1.0), |t, v| t.add(v[0], v[1])),
        case("add_broadcast", |s| vec![s.to_vec(), vec![s[3]]], (-1.0, 1.0), |t, v| {
            t.add(v[0], v[1])
        }),
        case("sub", pair, (-1.0, 1.0), |t, v| t.sub(v[0], v[1])),
        case("mul", pair, (-1.0, 1.0), |t, v| t.mul(v[0], v[1])),
        case("div", pair, (0.5, 1.5), |t, v| t.div(v[0], v[1])),
        case("relu", same, (-1.0, 1.0), |t, v| Ok(t.relu(v[0]))),
        case("leaky_relu", same, (-1.0, 1.0), |t, v| Ok(t.leaky_relu(v[0], 0.2))),
        case("clip_min1", same, (0.0, 2.0), |t, v| Ok(t.clip_min1(v[0]))),
        case("abs", same, (-1.0, 1.0), |t, v| Ok(t.abs(v[0]))),
        case("square", same, (-1.0, 1.0), |t, v| Ok(t.square(v[0]))),
        case("sqrt", same, (0.2, 1.0), |t, v| Ok(t.sqrt(v[0]))),
        case("scalar_mul", same, (-1.0, 1.0), |t, v| Ok(t.scalar_mul(v[0], -1.7))),
        case("add_scalar", same, (-1.0, 1.0), |t, v| Ok(t.add_scalar(v[0], 0.3))),
        case("concat_channels", pair, (-1.0, 1.0), |t, v| t.concat_channels(&[v[0], v[1], v[0]])),
        case("slice_channels", same, (-1.0, 1.0), |t, v| {
            let c = t.shape(v[0])[1];
            t.slice_channels(v[0], c / 2, c - c / 2)
        }),
        case("reshape", same, (-1.0, 1.0), |t, v| {
            let n = t.value(v[0]).numel();
            t.reshape(v[0], &[n])
        }),
        case("pad_zero", same, (-1.0, 1.0), |t, v| t.pad(v[0], Padding::Zero(2))),
        case("pad_symmetric", same, (-1.0, 1.0), |t, v| t.pad(v[0], Padding::Symmetric(2))),
        OpCase {
            name: "conv2d_3x3_zero",
            inputs: |s| conv_inputs(3)(s),
            domain: (-1.0, 1.0),
            large: false,
            f: |t, v| t.conv2d(v[0], v[1], 1, Padding::Zero(1)),
        },
        OpCase {
            name: "conv2d_5x5_symmetric",
            inputs: |s| conv_inputs(5)(s),
            domain: (-1.0, 1.0),
            large: false,
            f: |t, v| t.conv2d(v[0], v[1], 1, Padding::Symmetric(2)),
        },
        OpCase {
            name: "conv2d_2x2_stride2",
            inputs: |s| conv_inputs(2)(s),
            domain: (-1.0, 1.0),
            large: false,
            f: |t, v| t.conv2d(v[0], v[1], 2, Padding::None),
        },
        case("bicubic_down", same, (-1.0, 1.0), |t, v| t.resample(v[0], 0.5, Interpolation::Bicubic)),
        case("bicubic_up", same, (-1.0, 1.0), |t, v| t.resample(v[0], 2.0, Interpolation::Bicubic)),
        case("bilinear_down", same, (-1.0, 1.0), |t, v| t.resample(v[0], 0.5, Interpolation::Bilinear)),
        case("bilinear_up", same, (-1.0, 1.0), |t, v| t.resample(v[0], 2.0, Interpolation::Bilinear)),
        case("upsample_nearest", same, (-1.0, 1.0), |t, v| t.upsample_nearest(v[0])),
        case("spectral_filter", same, (-1.0, 1.0), |t, v| {
            let spectra = spectra_for(t, v[0], 17)?;
            t.spectral_filter(v[0], spectra)
        }),
        case("sum", same, (-1.0, 1.0), |t, v| Ok(t.sum(v[0]))),
        case("mean", same, (-1.0, 1.0), |t, v| Ok(t.mean(v[0]))),
        case("mean_abs", same, (-1.0, 1.0), |t, v| Ok(t.mean_abs(v[0]))),
        case("abs_sum", same, (-1.0, 1.0), |t, v| Ok(t.abs_sum(v[0]))),
        case("tv", same, (-1.0, 1.0), |t, v| t.tv(v[0])),
        loss("l1", pair, |t, v| losses::l1(t, v[0], v[1])),
        loss("l2_squared", pair, |t, v| losses::l2(t, v[0], v[1], L2Kind::MeanSquared)),
        loss("l2_root", pair, |t, v| losses::l2(t, v[0], v[1], L2Kind::Root)),
        loss("tv_loss", same, |t, v| losses::tv(t, v[0])),
        loss("ssim_loss", pair, |t, v| losses::ssim_loss(t, v[0], v[1])),
        loss("deblur_loss", pair, |t, v| {
            let a = t.resample_bicubic(v[0], 0.5)?;
            let b = t.resample_bicubic(v[1], 0.5)?;
            let w = LossWeights::default();
            losses::deblur_loss(t, &[v[0], a], &[v[1], b], &w)
        }),
        loss("enhance_loss", pair, |t, v| {
            losses::enhance_loss(t, v[0], v[1], &LossWeights::default())
        }),
        loss("reblur_loss", pair, |t, v| {
            let otfs = spectra_for(t, v[0], 23)?;
            losses::reblur_loss(t, v[0], v[1], otfs)
        }),
        loss("total_loss", |s| vec![s.to_vec(), s.to_vec(), s.to_vec()], |t, v| {
            let w = LossWeights::default();
            let d = losses::l1(t, v[0], v[1])?;
            let e = losses::enhance_loss(t, v[2], v[1], &w)?;
            let otfs = spectra_for(t, v[0], 29)?;
            let r = losses::reblur_loss(t, v[0], v[1], otfs)?;
            losses::total_loss(t, d, Some(e), Some(r), &w)
        }),
    ]
}

const SMALL_SHAPES: [[usize; 4]; 3] = [[1, 2, 6, 6], [2, 3, 8, 8], [1, 3, 8, 10]];
/// SSIM needs an 11×11 window at the half-resolution scale too.
const LOSS_SHAPES: [[usize; 4]; 3] = [[1, 1, 22, 22], [2, 3, 22, 22], [1, 2, 22, 24]];

/// Every differentiable operation and loss on three seeded shapes.
pub fn op_suite(seed_value: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (ci, case) in op_cases().into_iter().enumerate() {
        let shapes = if case.large { LOSS_SHAPES } else { SMALL_SHAPES };
        for (si, shape) in shapes.iter().enumerate() {
            let s = seed::split(seed::split(seed_value, ci as u64), si as u64);
            let inputs: Vec<Tensor<f64>> = (case.inputs)(shape)
                .iter()
                .enumerate()
                .map(|(i, sh)| uniform(sh, case.domain.0, case.domain.1, seed::split(s, i as u64)))
                .collect();
            let op = case.f;
            let f = move |t: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
                let out = op(t, v)?;
                project(t, out, seed::split(s, 99))
            };
            let (rel_error, entries) = check_all(&inputs, &f)?;
            checks.push(Check {
                name: case.name.to_string(),
                shape: shape.to_vec(),
                entries,
                rel_error,
                tolerance: OP_TOLERANCE,
            });
        }
    }
    Ok(checks)
}

/// Small architecture used for the end-to-end check.
pub fn end_to_end_config() -> NetworkConfig {
    NetworkConfig {
        base_channels: 4,
        unet_depth: 2,
        resblocks_per_level: 1,
        fm_feature_count: 4,
        scales: 2,
        fusion_mode: FusionMode::Xrfm,
        branch_mode: BranchMode::Both,
    }
}

/// Total-loss gradient of a perturbed network on one 32×32 sample,
/// `per_tensor` sampled entries from every parameter tensor.
pub fn end_to_end(seed_value: u64, per_tensor: usize) -> Result<Check> {
    let cfg = end_to_end_config();
    let mut net = Network::<f64>::new(cfg.clone(), seed::split(seed_value, 0))?;
    // Move off the zero-initialized tails so every path carries gradient.
    let mut rng = seed::rng(seed::split(seed_value, 1));
    for t in net.params.values_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    let sampler = crate::data::SamplerConfig {
        patch: 32,
        batch: 1,
        kernel_max: 15,
        ..crate::data::SamplerConfig::toy()
    };
    let image = crate::data::toy_scene(seed::split(seed_value, 2), 40, 40);
    let pairs = crate::data::make_batch(&[image], &sampler, seed::split(seed_value, 3))?;
    let batch = Batch::<f64>::from_pairs(&pairs)?;
    let obj = ObjectiveConfig::default();

    let names: Vec<String> = net.params.keys().cloned().collect();
    let mut tape = Tape::new();
    let ev = objective(&mut tape, &net, &batch, &obj, true)?;
    tape.backward(ev.total)?;
    let (mut a, mut n) = (Vec::new(), Vec::new());
    for name in &names {
        let grad = tape
            .grad(ev.output.params[name])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(net.params[name].shape()));
        for _ in 0..per_tensor {
            let index = rng.random_range(0..grad.numel());
            a.push(grad.data()[index]);
            let eval = |delta: f64| -> Result<f64> {
                let mut probe = net.clone();
                probe.params.get_mut(name).expect("named parameter").data_mut()[index] += delta;
                let mut tape = Tape::new();
                let total = objective(&mut tape, &probe, &batch, &obj, false)?.total;
                Ok(tape.item(total))
            };
            n.push((eval(STEP)? - eval(-STEP)?) / (2.0 * STEP));
        }
    }
    Ok(Check {
        name: "end_to_end_total_loss".to_string(),
        shape: vec![1, 3, 32, 32],
        entries: a.len(),
        rel_error: relative_error(&a, &n),
        tolerance: END_TO_END_TOLERANCE,
    })
}

/// The operation suite followed by the end-to-end check.
pub fn full_suite(seed_value: u64) -> Result<Vec<Check>> {
    let mut checks = op_suite(seed_value)?;
    checks.push(end_to_end(seed_value, 2)?);
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_is_normwise() {
        assert_eq!(relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((relative_error(&[3.0, 4.0], &[3.0, 4.5]) - 0.5 / 29.25f64.sqrt()).abs() < 1e-12);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // Analytic gradient of Σx² against the numeric one of Σx.
        let x = vec![uniform(&[4], 0.5, 1.0, 1)];
        let g = analytic_gradients(&x, &|t, v| {
            let s = t.square(v[0]);
            Ok(t.sum(s))
        })
        .unwrap();
        let numeric: Vec<f64> = (0..4)
            .map(|i| central_difference(&x, &|t, v| Ok(t.sum(v[0])), 0, i).unwrap())
            .collect();
        assert!(relative_error(g[0].data(), &numeric) > 0.1);
    }
}
