//! Multi-scale progressive dual attention (MPDA) and its reversed variant
//! (RMPDA).
//!
//! Four branches with nominal receptive fields 3/5/7/9 are produced by four
//! convolutions whose inner 3x3 stages are shared:
//!
//! ```text
//! X1 = f3(X)    X2 = f3(X1)    X3 = f5(X1)    X4 = f5(X2)
//! ```
//!
//! Each branch is gated by its own attention map, the gated branches are
//! concatenated and gated once more, then projected back to the input width
//! and added to the input.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::ConvGeom;
use crate::nn::{Builder, Conv, Ctx, ParamId};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Shape;

/// Nominal receptive field of each branch.
pub const RECEPTIVE_FIELDS: [usize; 4] = [3, 5, 7, 9];

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AttentionKind {
    Spatial,
    Channel,
}

impl AttentionKind {
    pub fn other(self) -> Self {
        match self {
            Self::Spatial => Self::Channel,
            Self::Channel => Self::Spatial,
        }
    }
}

/// Branch widths and attention assignment of a dual-attention block.
///
/// Branches pair up as `{X1, X2}` and `{X3, X4}`: the first pair gets
/// `fine_branches`, the second pair the other kind.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DualAttentionConfig {
    pub channels: usize,
    pub branch_channels: [usize; 4],
    pub fine_branches: AttentionKind,
    pub post_concat: AttentionKind,
    pub spatial_kernel: usize,
    /// Smallest accepted input side. Defaults to the largest receptive field;
    /// pyramid placements on coarse maps lower it and rely on zero padding.
    pub min_spatial: usize,
}

impl DualAttentionConfig {
    /// Shallow-level block: spatial on X1/X2, channel on X3/X4, spatial after
    /// concatenation. Branch widths are `channels / 4`.
    pub fn mpda(channels: usize) -> Result<Self> {
        Self::quartered(channels, AttentionKind::Spatial)
    }

    /// Deep-level block: the MPDA assignment reversed.
    pub fn rmpda(channels: usize) -> Result<Self> {
        Self::quartered(channels, AttentionKind::Channel)
    }

    fn quartered(channels: usize, fine: AttentionKind) -> Result<Self> {
        if channels == 0 || channels % 4 != 0 {
            return Err(Error::Config(alloc::format!(
                "dual attention needs a channel count divisible by 4, got {channels}"
            )));
        }
        let q = channels / 4;
        Self::new(channels, [q; 4], fine, fine)
    }

    pub fn new(
        channels: usize,
        branch_channels: [usize; 4],
        fine_branches: AttentionKind,
        post_concat: AttentionKind,
    ) -> Result<Self> {
        if channels == 0 || branch_channels.contains(&0) {
            return Err(Error::Config("dual attention widths must be positive".to_string()));
        }
        Ok(Self { channels, branch_channels, fine_branches, post_concat, spatial_kernel: 7, min_spatial: RECEPTIVE_FIELDS[3] })
    }

    pub fn with_min_spatial(mut self, min_spatial: usize) -> Self {
        self.min_spatial = min_spatial.max(1);
        self
    }

    pub fn concat_channels(&self) -> usize {
        self.branch_channels.iter().sum()
    }

    /// Attention kind applied to branch `i` (0-based).
    pub fn branch_kind(&self, i: usize) -> AttentionKind {
        if i < 2 {
            self.fine_branches
        } else {
            self.fine_branches.other()
        }
    }
}

/// ECA-style 1-D kernel size: nearest odd integer to `log2(C) / 2 + 1/2`,
/// at least 3.
pub fn eca_kernel_size(channels: usize) -> usize {
    let t = libm::log2(channels.max(1) as f64) / 2.0 + 0.5;
    let odd = 2.0 * libm::round((t - 1.0) / 2.0) + 1.0;
    (odd.max(3.0)) as usize
}

/// The four branch maps `X1..X4`.
#[derive(Clone, Copy, Debug)]
pub struct MultiScaleBundle {
    pub maps: [Var; 4],
}

/// Sigmoid over a k x k conv of `[channel-mean; channel-max]`, `(N,1,H,W)`.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub conv: Conv,
}

impl SpatialAttention {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, name: &str, kernel: usize) -> Self {
        Self { conv: b.conv(name, 2, 1, ConvGeom::same(kernel), false) }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mean = ctx.tape.channel_mean(x)?;
        let max = ctx.tape.channel_max(x)?;
        let stack = ctx.tape.concat(&[mean, max])?;
        let logits = self.conv.forward(ctx, stack)?;
        ctx.tape.sigmoid(logits)
    }
}

/// ECA-style gate: sigmoid of a zero-padded 1-D conv across the pooled
/// channel descriptor, `(N,C,1,1)`.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
}

impl ChannelAttention {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        let kernel = eca_kernel_size(channels);
        b.scoped(name, |b| Self {
            weight: b.uniform("weight", Shape::new(1, 1, kernel, 1), kernel),
            bias: b.constant("bias", Shape::new(1, 1, 1, 1), 0.0),
            kernel,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let s = ctx.tape.shape(x);
        let pooled = ctx.tape.global_avg_pool(x)?;
        let column = ctx.tape.reshape(pooled, Shape::new(s.n, 1, s.c, 1))?;
        let w = ctx.param(self.weight)?;
        let b = ctx.param(self.bias)?;
        let geom = ConvGeom { kh: self.kernel, kw: 1, stride: 1, pad_h: self.kernel / 2, pad_w: 0 };
        let logits = ctx.tape.conv2d(column, w, Some(b), geom)?;
        let gate = ctx.tape.sigmoid(logits)?;
        ctx.tape.reshape(gate, Shape::new(s.n, s.c, 1, 1))
    }
}

#[derive(Clone, Debug)]
pub enum Attention {
    Spatial(SpatialAttention),
    Channel(ChannelAttention),
}

impl Attention {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, name: &str, kind: AttentionKind, channels: usize, spatial_kernel: usize) -> Self {
        match kind {
            AttentionKind::Spatial => Self::Spatial(SpatialAttention::build(b, name, spatial_kernel)),
            AttentionKind::Channel => Self::Channel(ChannelAttention::build(b, name, channels)),
        }
    }

    pub fn kind(&self) -> AttentionKind {
        match self {
            Self::Spatial(_) => AttentionKind::Spatial,
            Self::Channel(_) => AttentionKind::Channel,
        }
    }

    /// The attention map `A(x)`, every value in `(0, 1)`.
    pub fn map<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        match self {
            Self::Spatial(a) => a.forward(ctx, x),
            Self::Channel(a) => a.forward(ctx, x),
        }
    }

    /// `A(x) ⊙ x`.
    pub fn apply<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let a = self.map(ctx, x)?;
        modulate(ctx, x, a)
    }
}

/// Elementwise gating with broadcasting over the map's singleton axes.
pub fn modulate<T: Real>(ctx: &mut Ctx<'_, T>, x: Var, attention: Var) -> Result<Var> {
    let (xs, a) = (ctx.tape.shape(x), ctx.tape.shape(attention));
    let compatible = a.n == xs.n && (a.c == 1 || a.c == xs.c) && (a.h == 1 || a.h == xs.h) && (a.w == 1 || a.w == xs.w);
    if !compatible {
        return Err(Error::ShapeMismatch { op: "modulate", detail: alloc::format!("map {} vs features {}", a, xs) });
    }
    ctx.tape.mul(x, attention)
}

/// One MPDA or RMPDA block.
#[derive(Clone, Debug)]
pub struct DualAttentionBlock {
    pub config: DualAttentionConfig,
    /// `f3(X)`, `f3(X1)`, `f5(X1)`, `f5(X2)`.
    pub branches: [Conv; 4],
    pub branch_attention: [Attention; 4],
    pub post_attention: Attention,
    pub projection: Conv,
}

impl DualAttentionBlock {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, name: &str, config: DualAttentionConfig) -> Self {
        b.scoped(name, |b| {
            let c = config.channels;
            let bc = config.branch_channels;
            let branches = [
                b.conv("branch1", c, bc[0], ConvGeom::same(3), true),
                b.conv("branch2", bc[0], bc[1], ConvGeom::same(3), true),
                b.conv("branch3", bc[0], bc[2], ConvGeom::same(5), true),
                b.conv("branch4", bc[1], bc[3], ConvGeom::same(5), true),
            ];
            let names = ["attn1", "attn2", "attn3", "attn4"];
            let branch_attention = core::array::from_fn(|i| {
                Attention::build(b, names[i], config.branch_kind(i), bc[i], config.spatial_kernel)
            });
            let post_attention =
                Attention::build(b, "attn_post", config.post_concat, config.concat_channels(), config.spatial_kernel);
            let projection = b.conv("proj", config.concat_channels(), c, ConvGeom::same(1), false);
            Self { config, branches, branch_attention, post_attention, projection }
        })
    }

    /// The four receptive-field branches; exactly four convolutions run.
    pub fn multiscale_split<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<MultiScaleBundle> {
        let s = ctx.tape.shape(x);
        let min = self.config.min_spatial;
        if s.h < min || s.w < min {
            return Err(Error::InputTooSmall { op: "multiscale_split", h: s.h, w: s.w, min });
        }
        if s.c != self.config.channels {
            return Err(Error::ChannelMismatch { op: "multiscale_split", expected: self.config.channels, got: s.c });
        }
        let x1 = self.branches[0].forward(ctx, x)?;
        let x2 = self.branches[1].forward(ctx, x1)?;
        let x3 = self.branches[2].forward(ctx, x1)?;
        let x4 = self.branches[3].forward(ctx, x2)?;
        Ok(MultiScaleBundle { maps: [x1, x2, x3, x4] })
    }

    /// Gated concatenation `A(Concat(X1', .., X4')) ⊙ Concat(X1', .., X4')`
    /// before projection.
    pub fn fused<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let bundle = self.multiscale_split(ctx, x)?;
        let gated = bundle
            .maps
            .iter()
            .zip(&self.branch_attention)
            .map(|(&m, a)| a.apply(ctx, m))
            .collect::<Result<Vec<_>>>()?;
        let cat = ctx.tape.concat(&gated)?;
        self.post_attention.apply(ctx, cat)
    }

    /// `X + proj(fused(X))`: same shape as the input.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let f = self.fused(ctx, x)?;
        let p = self.projection.forward(ctx, f)?;
        ctx.tape.add(x, p)
    }
}
