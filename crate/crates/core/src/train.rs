//! Objective assembly and the Adam training loop.

use std::collections::BTreeMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::data::{make_batch, SamplerConfig};
use crate::error::{contract_err, Result};
use crate::losses::{deblur_loss, enhance_loss, reblur_loss, total_loss, LossParts, LossWeights};
use crate::network::{Checkpoint, ForwardOutput, Network, NetworkConfig, Observation};
use crate::seed;
use crate::sim::{kernel_otf, DegradedPair};
use crate::tensor::{Adam, AdamState, Real, Tape, Tensor, Var};

/// Stacked tensors of a list of pairs.
#[derive(Debug, Clone)]
pub struct Batch<T: Real> {
    pub obs: Observation<T>,
    pub x: Tensor<T>,
    pub y_lin: Tensor<T>,
}

impl<T: Real> Batch<T> {
    pub fn from_pairs(pairs: &[DegradedPair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(contract_err!("empty batch"));
        }
        let stack = |f: fn(&DegradedPair) -> &Tensor<f64>| -> Result<Tensor<T>> {
            let items: Vec<Tensor<T>> = pairs.iter().map(|p| f(p).cast()).collect();
            Tensor::stack(&items)
        };
        Ok(Self {
            obs: Observation::new(stack(|p| &p.y)?, pairs.iter().map(|p| p.k.clone()).collect()),
            x: stack(|p| &p.x)?,
            y_lin: stack(|p| &p.y_lin)?,
        })
    }
}

/// Which terms enter the total loss and with what weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    pub enhance: bool,
    pub reblur: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            enhance: true,
            reblur: true,
        }
    }
}

/// Objective value on the tape plus its parts.
pub struct Evaluated {
    pub total: Var,
    pub parts: LossParts,
    pub output: ForwardOutput,
}

/// Record the forward pass and the total loss for `batch`.
///
/// Deblurring targets are the clean images, bicubic-downsampled per scale.
/// The enhancement and reblurring targets are the blurry images before noise
/// and clipping. The enhancement term is absent when the image branch is off.
pub fn objective<T: Real>(
    tape: &mut Tape<T>,
    net: &Network<T>,
    batch: &Batch<T>,
    cfg: &ObjectiveConfig,
    trainable: bool,
) -> Result<Evaluated> {
    cfg.weights.validate()?;
    let output = net.forward(tape, &batch.obs, trainable)?;
    let mut targets = vec![tape.constant(batch.x.clone())];
    for _ in 1..output.restored.len() {
        let prev = *targets.last().expect("finest target present");
        targets.push(tape.resample_bicubic(prev, 0.5)?);
    }
    let deblur = deblur_loss(tape, &output.restored, &targets, &cfg.weights)?;
    let y_lin = tape.constant(batch.y_lin.clone());
    let enhance = match output.enhanced {
        Some(e) if cfg.enhance => Some(enhance_loss(tape, e, y_lin, &cfg.weights)?),
        _ => None,
    };
    let reblur = if cfg.reblur {
        let (_, _, h, w) = batch.x.dims4()?;
        let otfs = batch
            .obs
            .kernels
            .iter()
            .map(|k| kernel_otf::<T>(k, h, w))
            .collect::<Result<Vec<_>>>()?;
        Some(reblur_loss(tape, output.restored[0], y_lin, Rc::new(otfs))?)
    } else {
        None
    };
    let total = total_loss(tape, deblur, enhance, reblur, &cfg.weights)?;
    let parts = LossParts {
        deblur: tape.item(deblur).f64(),
        enhance: enhance.map(|v| tape.item(v).f64()),
        reblur: reblur.map(|v| tape.item(v).f64()),
        total: tape.item(total).f64(),
    };
    Ok(Evaluated { total, parts, output })
}

/// Objective value without gradients.
pub fn evaluate_objective<T: Real>(net: &Network<T>, batch: &Batch<T>, cfg: &ObjectiveConfig) -> Result<LossParts> {
    let mut tape = Tape::new();
    Ok(objective(&mut tape, net, batch, cfg, false)?.parts)
}

/// Objective and parameter gradients by name.
pub fn loss_and_gradients<T: Real>(
    net: &Network<T>,
    batch: &Batch<T>,
    cfg: &ObjectiveConfig,
) -> Result<(LossParts, BTreeMap<String, Tensor<T>>)> {
    let mut tape = Tape::new();
    let ev = objective(&mut tape, net, batch, cfg, true)?;
    tape.backward(ev.total)?;
    let grads = ev
        .output
        .params
        .iter()
        .map(|(name, &v)| {
            let g = tape
                .grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.shape(v)));
            (name.clone(), g)
        })
        .collect();
    Ok((ev.parts, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub sampler: SamplerConfig,
    pub objective: ObjectiveConfig,
    pub lr: f64,
    /// The learning rate halves after this many passes over the image list.
    pub halve_every_epochs: f64,
    /// Linear learning-rate ramp over the first steps; 0 disables it.
    pub warmup_steps: u64,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub clip_grad_norm: Option<f64>,
    pub adam: Adam,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            sampler: SamplerConfig::toy(),
            objective: ObjectiveConfig::default(),
            lr: 2e-4,
            halve_every_epochs: 50.0,
            warmup_steps: 0,
            clip_grad_norm: None,
            adam: Adam::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.sampler.validate()?;
        self.objective.weights.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.halve_every_epochs > 0.0) {
            return Err(contract_err!("lr and halve_every_epochs must be positive"));
        }
        if self.clip_grad_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(contract_err!("clip_grad_norm must be positive"));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(contract_err!("adam needs betas in [0, 1) and a positive eps"));
        }
        let d = self.network.divisor();
        if self.sampler.patch % d != 0 {
            return Err(contract_err!(
                "patch {} must be divisible by {d} for this network",
                self.sampler.patch
            ));
        }
        Ok(())
    }

    /// Learning rate for optimizer step `step` (0-based) given the number of
    /// training images.
    pub fn lr_at(&self, step: u64, images: usize) -> f64 {
        let epochs = (step as f64 * self.sampler.batch as f64) / images.max(1) as f64;
        let halvings = (epochs / self.halve_every_epochs).floor();
        let ramp = if step < self.warmup_steps {
            (step + 1) as f64 / self.warmup_steps as f64
        } else {
            1.0
        };
        self.lr * ramp * 0.5f64.powf(halvings)
    }
}

/// Values logged after one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub loss: LossParts,
}

/// Single-threaded, fully seeded trainer in 32-bit floats.
pub struct Trainer {
    pub config: TrainConfig,
    pub network: Network<f32>,
    adam: Adam,
    state: AdamState<f32>,
    images: Vec<Tensor<f64>>,
}

impl Trainer {
    pub fn new(config: TrainConfig, images: Vec<Tensor<f64>>) -> Result<Self> {
        config.validate()?;
        if images.is_empty() {
            return Err(contract_err!("training needs at least one image"));
        }
        let network = Network::new(config.network.clone(), seed::split(config.seed, 0))?;
        let state = AdamState::new(&network.params);
        Ok(Self {
            adam: config.adam,
            config,
            network,
            state,
            images,
        })
    }

    /// Continue from a checkpoint that carries optimizer state.
    pub fn resume(config: TrainConfig, images: Vec<Tensor<f64>>, ckpt: Checkpoint) -> Result<Self> {
        let mut t = Self::new(config, images)?;
        if ckpt.network.config != t.config.network {
            return Err(contract_err!("checkpoint network config differs from the training config"));
        }
        let (adam, state) = ckpt
            .optimizer
            .ok_or_else(|| contract_err!("checkpoint has no optimizer state"))?;
        t.network = ckpt.network;
        t.adam = adam;
        t.state = state;
        Ok(t)
    }

    pub fn step_count(&self) -> u64 {
        self.state.step
    }

    /// Pairs for step `step`; identical across runs with the same seed.
    pub fn batch_for(&self, step: u64) -> Result<Vec<DegradedPair>> {
        let stream = seed::split(seed::split(self.config.seed, 1), step);
        make_batch(&self.images, &self.config.sampler, stream)
    }

    /// Fixed batch, disjoint in seed from the training stream, for
    /// reporting the objective before and after training.
    pub fn monitor_batch(&self) -> Result<Batch<f32>> {
        let pairs = make_batch(&self.images, &self.config.sampler, seed::split(self.config.seed, 2))?;
        Batch::from_pairs(&pairs)
    }

    pub fn monitor_loss(&self, batch: &Batch<f32>) -> Result<LossParts> {
        evaluate_objective(&self.network, batch, &self.config.objective)
    }

    pub fn step(&mut self) -> Result<StepLog> {
        let step = self.state.step;
        let batch = Batch::from_pairs(&self.batch_for(step)?)?;
        let (loss, mut grads) = loss_and_gradients(&self.network, &batch, &self.config.objective)?;
        if !loss.total.is_finite() {
            return Err(contract_err!("loss diverged at step {step}: {}", loss.total));
        }
        let grad_norm = grads
            .values()
            .flat_map(|g| g.data().iter().map(|v| v.f64() * v.f64()))
            .sum::<f64>()
            .sqrt();
        if let Some(limit) = self.config.clip_grad_norm {
            if grad_norm > limit {
                let scale = (limit / grad_norm) as f32;
                for g in grads.values_mut() {
                    g.data_mut().iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
        let lr = self.config.lr_at(step, self.images.len());
        self.adam.step(&mut self.state, &mut self.network.params, &grads, lr)?;
        Ok(StepLog {
            step,
            lr,
            grad_norm,
            loss,
        })
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            network: self.network.clone(),
            step: self.state.step,
            optimizer: Some((self.adam, self.state.clone())),
            training: serde_json::to_value(&self.config)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toy_scene;
    use crate::network::{BranchMode, FusionMode};

    fn tiny() -> TrainConfig {
        TrainConfig {
            network: NetworkConfig {
                base_channels: 4,
                unet_depth: 2,
                resblocks_per_level: 1,
                fm_feature_count: 4,
                scales: 2,
                fusion_mode: FusionMode::Xrfm,
                branch_mode: BranchMode::Both,
            },
            sampler: SamplerConfig {
                patch: 32,
                batch: 2,
                kernel_max: 15,
                ..SamplerConfig::toy()
            },
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_halves_per_fifty_epochs() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0, 8), 2e-4);
        // batch 8 over 8 images: one epoch per step.
        assert_eq!(cfg.lr_at(49, 8), 2e-4);
        assert_eq!(cfg.lr_at(50, 8), 1e-4);
        assert_eq!(cfg.lr_at(100, 8), 5e-5);
        assert_eq!(cfg.lr_at(99, 16), 2e-4);
    }

    #[test]
    fn objective_parts_follow_flags() {
        let cfg = tiny();
        let net = Network::<f64>::new(cfg.network.clone(), 1).unwrap();
        let images = vec![toy_scene(1, 48, 48)];
        let batch = Batch::from_pairs(&make_batch(&images, &cfg.sampler, 2).unwrap()).unwrap();
        let full = evaluate_objective(&net, &batch, &cfg.objective).unwrap();
        let w = &cfg.objective.weights;
        let expect = w.deblur * full.deblur + w.enhance * full.enhance.unwrap() + w.reblur * full.reblur.unwrap();
        assert!((full.total - expect).abs() < 1e-12);

        let off = ObjectiveConfig {
            enhance: false,
            reblur: false,
            ..cfg.objective.clone()
        };
        let bare = evaluate_objective(&net, &batch, &off).unwrap();
        assert_eq!((bare.enhance, bare.reblur), (None, None));
        assert!((bare.total - full.deblur).abs() < 1e-12);

        let feature = Network::<f64>::new(
            NetworkConfig {
                branch_mode: BranchMode::FeatureOnly,
                ..cfg.network.clone()
            },
            1,
        )
        .unwrap();
        assert_eq!(evaluate_objective(&feature, &batch, &cfg.objective).unwrap().enhance, None);
    }

    #[test]
    fn training_is_deterministic() {
        let images = vec![toy_scene(5, 40, 40), toy_scene(6, 48, 40)];
        let run = || {
            let mut t = Trainer::new(tiny(), images.clone()).unwrap();
            let logs: Vec<StepLog> = (0..2).map(|_| t.step().unwrap()).collect();
            (logs, t.network.params)
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_eq!(a[1].step, 1);
    }

    #[test]
    fn resume_continues_identically() {
        let images = vec![toy_scene(7, 40, 40)];
        let mut straight = Trainer::new(tiny(), images.clone()).unwrap();
        for _ in 0..2 {
            straight.step().unwrap();
        }
        let mut first = Trainer::new(tiny(), images.clone()).unwrap();
        first.step().unwrap();
        let dir = tempfile::tempdir().unwrap();
        crate::network::save_checkpoint(dir.path(), &first.checkpoint().unwrap()).unwrap();
        let ckpt = crate::network::load_checkpoint(dir.path()).unwrap();
        let mut resumed = Trainer::resume(tiny(), images, ckpt).unwrap();
        resumed.step().unwrap();
        assert_eq!(resumed.network.params, straight.network.params);
        assert_eq!(resumed.step_count(), 2);
    }

    #[test]
    fn patch_must_fit_divisor() {
        let mut cfg = tiny();
        cfg.sampler.patch = 36;
        assert!(cfg.validate().unwrap_err().to_string().contains("divisible by 8"));
    }
}
