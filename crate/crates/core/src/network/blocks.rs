//! Residual blocks, ResUNet, feature module and cross-residual fusion.

use super::ctx::{Ctx, Init};
use super::NetworkConfig;
use crate::error::{contract_err, Result};
use crate::tensor::{Real, Var};

/// Number of stride-2 levels inside the fusion encoder.
pub const XRFM_LEVELS: usize = 2;

/// `x + conv(lrelu(conv(x)))`, second conv zero-initialized.
pub(crate) fn resblock<T: Real>(ctx: &mut Ctx<T>, name: &str, x: Var) -> Result<Var> {
    let c = ctx.channels(x);
    let h = ctx.conv(&format!("{name}.c1"), x, c, 3, 1, Init::Kaiming)?;
    let h = ctx.lrelu(h);
    let r = ctx.conv(&format!("{name}.c2"), h, c, 3, 1, Init::Zero)?;
    ctx.tape.add(x, r)
}

/// Encoder of strided 2×2 convolutions, resblock body, nearest-neighbor
/// upsampling decoder with concatenated skips; returns the tail output.
pub(crate) fn resunet<T: Real>(
    ctx: &mut Ctx<T>,
    name: &str,
    x: Var,
    out: usize,
    tail_init: Init,
    cfg: &NetworkConfig,
) -> Result<Var> {
    let width = |l: usize| cfg.base_channels << l;
    let mut h = ctx.conv(&format!("{name}.head"), x, width(0), 3, 1, Init::Kaiming)?;
    let mut skips = Vec::with_capacity(cfg.unet_depth);
    for l in 0..cfg.unet_depth {
        for i in 0..cfg.resblocks_per_level {
            h = resblock(ctx, &format!("{name}.enc{l}.rb{i}"), h)?;
        }
        skips.push(h);
        h = ctx.conv(&format!("{name}.enc{l}.down"), h, width(l + 1), 2, 2, Init::Kaiming)?;
    }
    for i in 0..cfg.resblocks_per_level {
        h = resblock(ctx, &format!("{name}.body.rb{i}"), h)?;
    }
    for l in (0..cfg.unet_depth).rev() {
        let up = ctx.tape.upsample_nearest(h)?;
        let up = ctx.conv(&format!("{name}.dec{l}.up"), up, width(l), 3, 1, Init::Kaiming)?;
        let joined = ctx.tape.concat_channels(&[up, skips[l]])?;
        h = ctx.conv(&format!("{name}.dec{l}.merge"), joined, width(l), 1, 1, Init::Kaiming)?;
        for i in 0..cfg.resblocks_per_level {
            h = resblock(ctx, &format!("{name}.dec{l}.rb{i}"), h)?;
        }
    }
    ctx.conv(&format!("{name}.tail"), h, out, 3, 1, tail_init)
}

/// Enhancement module: `y + f(concat(y, noise_map))`.
pub(crate) fn em_forward<T: Real>(ctx: &mut Ctx<T>, y: Var, noise_map: Var, cfg: &NetworkConfig) -> Result<Var> {
    let input = ctx.tape.concat_channels(&[y, noise_map])?;
    let f = resunet(ctx, "em", input, 3, Init::Zero, cfg)?;
    ctx.tape.add(y, f)
}

/// Feature module: one 3→F convolution and three F-channel resblocks.
pub(crate) fn fm_forward<T: Real>(ctx: &mut Ctx<T>, y: Var, cfg: &NetworkConfig) -> Result<Var> {
    let mut h = ctx.conv("fm.head", y, cfg.fm_feature_count, 3, 1, Init::Kaiming)?;
    for i in 0..3 {
        h = resblock(ctx, &format!("fm.rb{i}"), h)?;
    }
    Ok(h)
}

/// Feature-space refinement: ResUNet from F channels to an image.
pub(crate) fn fsrm_forward<T: Real>(ctx: &mut Ctx<T>, features: Var, cfg: &NetworkConfig) -> Result<Var> {
    resunet(ctx, "fsrm", features, 3, Init::Kaiming, cfg)
}

/// Cross residual block. `s = h(a) + h(b)` is computed once and injected
/// into both streams: `a′ = a + g_a(a, s)`, `b′ = b + g_b(b, s)` with
/// `g(x, s) = conv₂(lrelu(conv₁(x) + s))`.
pub(crate) fn xrb_forward<T: Real>(ctx: &mut Ctx<T>, name: &str, a: Var, b: Var) -> Result<(Var, Var)> {
    if ctx.tape.shape(a) != ctx.tape.shape(b) {
        return Err(contract_err!(
            "cross residual streams differ: {:?} vs {:?}",
            ctx.tape.shape(a),
            ctx.tape.shape(b)
        ));
    }
    let c = ctx.channels(a);
    let ha = ctx.conv(&format!("{name}.h"), a, c, 3, 1, Init::Kaiming)?;
    let hb = ctx.conv(&format!("{name}.h"), b, c, 3, 1, Init::Kaiming)?;
    let s = ctx.tape.add(ha, hb)?;
    let stream = |ctx: &mut Ctx<T>, x: Var, tag: &str| -> Result<Var> {
        let t = ctx.conv(&format!("{name}.{tag}1"), x, c, 3, 1, Init::Kaiming)?;
        let t = ctx.tape.add(t, s)?;
        let t = ctx.lrelu(t);
        let r = ctx.conv(&format!("{name}.{tag}2"), t, c, 3, 1, Init::Zero)?;
        ctx.tape.add(x, r)
    };
    let a2 = stream(ctx, a, "ga")?;
    let b2 = stream(ctx, b, "gb")?;
    Ok((a2, b2))
}

/// Two-stream encoder-decoder of four cross residual blocks; the head merges
/// both streams with a 1×1 convolution down to three channels.
pub(crate) fn xrfm_forward<T: Real>(
    ctx: &mut Ctx<T>,
    x1: Var,
    x2: Var,
    carry: Var,
    cfg: &NetworkConfig,
) -> Result<Var> {
    let c = cfg.base_channels;
    let seed_a = ctx.tape.concat_channels(&[x1, carry])?;
    let a0 = ctx.conv("xrfm.in_a", seed_a, c, 3, 1, Init::Kaiming)?;
    let b0 = ctx.conv("xrfm.in_b", x2, c, 3, 1, Init::Kaiming)?;
    let (a1, b1) = xrb_forward(ctx, "xrfm.xrb0", a0, b0)?;

    let a = ctx.conv("xrfm.down0_a", a1, 2 * c, 2, 2, Init::Kaiming)?;
    let b = ctx.conv("xrfm.down0_b", b1, 2 * c, 2, 2, Init::Kaiming)?;
    let (a2, b2) = xrb_forward(ctx, "xrfm.xrb1", a, b)?;

    let a = ctx.conv("xrfm.down1_a", a2, 4 * c, 2, 2, Init::Kaiming)?;
    let b = ctx.conv("xrfm.down1_b", b2, 4 * c, 2, 2, Init::Kaiming)?;
    let (a3, b3) = xrb_forward(ctx, "xrfm.xrb2", a, b)?;

    let up = |ctx: &mut Ctx<T>, x: Var, name: &str, out: usize, skip: Var| -> Result<Var> {
        let u = ctx.tape.upsample_nearest(x)?;
        let u = ctx.conv(name, u, out, 3, 1, Init::Kaiming)?;
        ctx.tape.add(u, skip)
    };
    let a = up(ctx, a3, "xrfm.up1_a", 2 * c, a2)?;
    let b = up(ctx, b3, "xrfm.up1_b", 2 * c, b2)?;
    let (a4, b4) = xrb_forward(ctx, "xrfm.xrb3", a, b)?;

    let a = up(ctx, a4, "xrfm.up0_a", c, a1)?;
    let b = up(ctx, b4, "xrfm.up0_b", c, b1)?;
    let joined = ctx.tape.concat_channels(&[a, b])?;
    ctx.conv("xrfm.merge", joined, 3, 1, 1, Init::Kaiming)
}

/// Ablation fusions: a plain ResUNet over `x1 + x2` (add) or the stacked
/// inputs (concat), with the carry appended.
pub(crate) fn plain_fusion_forward<T: Real>(
    ctx: &mut Ctx<T>,
    x1: Var,
    x2: Var,
    carry: Var,
    concat: bool,
    cfg: &NetworkConfig,
) -> Result<Var> {
    let input = if concat {
        ctx.tape.concat_channels(&[x1, x2, carry])?
    } else {
        let sum = ctx.tape.add(x1, x2)?;
        ctx.tape.concat_channels(&[sum, carry])?
    };
    resunet(ctx, "fuse", input, 3, Init::Kaiming, cfg)
}
