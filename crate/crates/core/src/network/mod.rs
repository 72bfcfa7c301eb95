//! Two-branch restoration network: an image branch (enhancement ResUNet then
//! Wiener deconvolution), a feature branch (feature extraction, Wiener
//! deconvolution of the feature maps, refinement ResUNet) and a cross-residual
//! fusion module applied coarse-to-fine with shared weights.

mod blocks;
mod checkpoint;
mod ctx;

use std::collections::BTreeMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{contract_err, dim_err, Result};
use crate::sim::BlurKernel;
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::wiener::{estimate_noise_map, estimate_nsr, WienerFilter};

pub use blocks::XRFM_LEVELS;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use ctx::{ParamMap, LEAKY_SLOPE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Xrfm,
    Add,
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BranchMode {
    #[default]
    Both,
    ImageOnly,
    FeatureOnly,
}

impl BranchMode {
    pub fn uses_image(self) -> bool {
        self != BranchMode::FeatureOnly
    }

    pub fn uses_feature(self) -> bool {
        self != BranchMode::ImageOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub base_channels: usize,
    /// Stride-2 levels in each ResUNet.
    pub unet_depth: usize,
    pub resblocks_per_level: usize,
    pub fm_feature_count: usize,
    pub scales: usize,
    pub fusion_mode: FusionMode,
    pub branch_mode: BranchMode,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            unet_depth: 3,
            resblocks_per_level: 2,
            fm_feature_count: 16,
            scales: 2,
            fusion_mode: FusionMode::Xrfm,
            branch_mode: BranchMode::Both,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.fm_feature_count == 0 || self.scales == 0 {
            return Err(contract_err!(
                "base_channels, fm_feature_count and scales must be at least 1"
            ));
        }
        Ok(())
    }

    /// Spatial extents must be multiples of this.
    pub fn divisor(&self) -> usize {
        let depth = match self.fusion_mode {
            FusionMode::Xrfm => self.unet_depth.max(XRFM_LEVELS),
            _ => self.unet_depth,
        };
        1 << (depth + self.scales - 1)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Network input: observations `[B,3,H,W]` with one kernel per item.
#[derive(Debug, Clone)]
pub struct Observation<T: Real> {
    pub y: Tensor<T>,
    pub kernels: Vec<BlurKernel>,
    /// Replaces the estimated noise-to-signal ratio at every scale.
    pub nsr_override: Option<f64>,
}

impl<T: Real> Observation<T> {
    pub fn new(y: Tensor<T>, kernels: Vec<BlurKernel>) -> Self {
        Self {
            y,
            kernels,
            nsr_override: None,
        }
    }
}

/// Variables produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Restorations per scale, finest first.
    pub restored: Vec<Var>,
    /// Enhanced observation at the finest scale (absent without image branch).
    pub enhanced: Option<Var>,
    pub image_branch: Option<Var>,
    pub feature_branch: Option<Var>,
    /// Parameter variables on the tape.
    pub params: BTreeMap<String, Var>,
}

/// Per-scale constants derived from the observation.
struct ScaleInput<T: Real> {
    y: Var,
    noise_map: Var,
    spectra: Rc<Vec<Vec<rustfft::num_complex::Complex<T>>>>,
}

/// Architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Real> {
    pub config: NetworkConfig,
    pub params: ParamMap<T>,
}

impl<T: Real> Network<T> {
    /// Kaiming-uniform convolutions, zero last layers on residual paths.
    pub fn new(config: NetworkConfig, seed_value: u64) -> Result<Self> {
        config.validate()?;
        let extent = config.divisor() * 32usize.div_ceil(config.divisor());
        let obs = Observation::new(
            Tensor::full(&[1, 3, extent, extent], T::of(0.5)),
            vec![BlurKernel::delta(13)?],
        );
        let mut params = ParamMap::new();
        let mut tape = Tape::new();
        {
            let mut ctx = ctx::Ctx::declaring(&mut tape, &mut params, seed_value);
            forward_with(&mut ctx, &obs, &config)?;
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: NetworkConfig, params: ParamMap<T>) -> Result<Self> {
        config.validate()?;
        let reference = Network::<T>::new(config.clone(), 0)?;
        for (name, t) in &reference.params {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(contract_err!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    ))
                }
                None => return Err(contract_err!("missing parameter {name}")),
            }
        }
        if let Some(extra) = params.keys().find(|k| !reference.params.contains_key(*k)) {
            return Err(contract_err!("unexpected parameter {extra}"));
        }
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Record a forward pass on `tape`; parameters become gradient leaves
    /// when `trainable`.
    pub fn forward(&self, tape: &mut Tape<T>, obs: &Observation<T>, trainable: bool) -> Result<ForwardOutput> {
        let mut ctx = ctx::Ctx::new(tape, &self.params, trainable);
        let mut out = forward_with(&mut ctx, obs, &self.config)?;
        out.params = ctx.into_vars();
        Ok(out)
    }

    /// Enhancement module alone on `[B,3,H,W]` observations.
    pub fn enhance(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.eval_block(|ctx, cfg| {
            let yv = ctx.tape.constant(y.clone());
            let (b, _, h, w) = y.dims4()?;
            let maps = (0..b)
                .map(|i| estimate_noise_map(&y.batch_item(i)?.reshape(&[3, h, w])?))
                .collect::<Result<Vec<_>>>()?;
            let map = ctx.tape.constant(Tensor::stack(&maps)?);
            blocks::em_forward(ctx, yv, map, cfg)
        })
    }

    /// Feature module alone.
    pub fn features(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.eval_block(|ctx, cfg| {
            let yv = ctx.tape.constant(y.clone());
            blocks::fm_forward(ctx, yv, cfg)
        })
    }

    /// Cross residual block `index` of the fusion module on two streams.
    pub fn cross_residual(&self, index: usize, a: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let mut ctx = ctx::Ctx::new(&mut tape, &self.params, false);
        let av = ctx.tape.constant(a.clone());
        let bv = ctx.tape.constant(b.clone());
        let (oa, ob) = blocks::xrb_forward(&mut ctx, &format!("xrfm.xrb{index}"), av, bv)?;
        Ok((tape.value(oa).clone(), tape.value(ob).clone()))
    }

    fn eval_block(&self, f: impl FnOnce(&mut ctx::Ctx<T>, &NetworkConfig) -> Result<Var>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let mut ctx = ctx::Ctx::new(&mut tape, &self.params, false);
        let out = f(&mut ctx, &self.config)?;
        Ok(tape.value(out).clone())
    }

    /// Finest-scale restoration without gradient bookkeeping.
    pub fn restore(&self, obs: &Observation<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, obs, false)?;
        Ok(tape.value(out.restored[0]).clone())
    }
}

fn check_observation<T: Real>(obs: &Observation<T>, cfg: &NetworkConfig) -> Result<(usize, usize, usize)> {
    let (b, c, h, w) = obs.y.dims4()?;
    if c != 3 {
        return Err(dim_err!("observation must have 3 channels, got {c}"));
    }
    if obs.kernels.len() != b {
        return Err(contract_err!("{} kernels for a batch of {b}", obs.kernels.len()));
    }
    let d = cfg.divisor();
    if h % d != 0 || w % d != 0 {
        return Err(contract_err!(
            "image extents {h}x{w} must be divisible by {d} for this configuration"
        ));
    }
    Ok((b, h, w))
}

fn scale_input<T: Real>(
    tape: &mut Tape<T>,
    y: Var,
    kernels: &[BlurKernel],
    nsr_override: Option<f64>,
) -> Result<ScaleInput<T>> {
    let value = tape.value(y).clone();
    let (b, _, h, w) = value.dims4()?;
    let mut maps = Vec::with_capacity(b);
    let mut spectra = Vec::with_capacity(b);
    for (i, k) in kernels.iter().enumerate() {
        let item = value.batch_item(i)?.reshape(&[3, h, w])?;
        let nsr = match nsr_override {
            Some(v) => v,
            None => estimate_nsr(&item)?.nsr,
        };
        maps.push(estimate_noise_map(&item)?);
        spectra.push(WienerFilter::<T>::new(k, h, w, nsr)?.response().to_vec());
    }
    let noise_map = tape.constant(Tensor::stack(&maps)?);
    Ok(ScaleInput {
        y,
        noise_map,
        spectra: Rc::new(spectra),
    })
}

fn forward_with<T: Real>(ctx: &mut ctx::Ctx<T>, obs: &Observation<T>, cfg: &NetworkConfig) -> Result<ForwardOutput> {
    check_observation(obs, cfg)?;
    let mut kernels = obs.kernels.clone();
    let y0 = ctx.tape.constant(obs.y.clone());
    let mut inputs = vec![scale_input(ctx.tape, y0, &kernels, obs.nsr_override)?];
    for _ in 1..cfg.scales {
        let prev = inputs.last().expect("finest scale present").y;
        let y = ctx.tape.resample_bicubic(prev, 0.5)?;
        kernels = kernels.iter().map(BlurKernel::downsample).collect();
        inputs.push(scale_input(ctx.tape, y, &kernels, obs.nsr_override)?);
    }

    let mut restored = vec![None; cfg.scales];
    let mut carry: Option<Var> = None;
    let mut finest = (None, None, None);
    for s in (0..cfg.scales).rev() {
        let inp = &inputs[s];
        let (enhanced, x1) = if cfg.branch_mode.uses_image() {
            let e = blocks::em_forward(ctx, inp.y, inp.noise_map, cfg)?;
            let x1 = ctx.tape.spectral_filter(e, inp.spectra.clone())?;
            (Some(e), Some(x1))
        } else {
            (None, None)
        };
        let x2 = if cfg.branch_mode.uses_feature() {
            let f = blocks::fm_forward(ctx, inp.y, cfg)?;
            let f = ctx.tape.spectral_filter(f, inp.spectra.clone())?;
            Some(blocks::fsrm_forward(ctx, f, cfg)?)
        } else {
            None
        };
        let (a, b) = match (x1, x2) {
            (Some(a), Some(b)) => (a, b),
            (Some(a), None) => (a, a),
            (None, Some(b)) => (b, b),
            (None, None) => unreachable!("at least one branch is active"),
        };
        let c = match carry {
            None => a,
            Some(coarse) => ctx.tape.resample(coarse, 2.0, crate::tensor::Interpolation::Bilinear)?,
        };
        let out = match cfg.fusion_mode {
            FusionMode::Xrfm => blocks::xrfm_forward(ctx, a, b, c, cfg)?,
            FusionMode::Add => blocks::plain_fusion_forward(ctx, a, b, c, false, cfg)?,
            FusionMode::Concat => blocks::plain_fusion_forward(ctx, a, b, c, true, cfg)?,
        };
        restored[s] = Some(out);
        carry = Some(out);
        if s == 0 {
            finest = (enhanced, x1, x2);
        }
    }
    Ok(ForwardOutput {
        restored: restored.into_iter().map(|v| v.expect("every scale ran")).collect(),
        enhanced: finest.0,
        image_branch: finest.1,
        feature_branch: finest.2,
        params: BTreeMap::new(),
    })
}
