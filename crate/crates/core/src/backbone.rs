//! GELAN / AELAN aggregation blocks and the feature pyramid built from them.

use alloc::format;
use alloc::vec::Vec;

use crate::attention::{DualAttentionBlock, DualAttentionConfig};
use crate::error::{Error, Result};
use crate::kernels::ConvGeom;
use crate::nn::{Builder, Conv, ConvUnit, Ctx};
use crate::real::Real;
use crate::tape::Var;

/// Shape of one aggregation block.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AelanConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub csp_depth: usize,
    /// `false` gives the GELAN baseline with the same topology.
    pub use_deformable: bool,
    /// Width entering the 1x1 transition: the untouched half, the processed
    /// half, and one output per CSP unit.
    pub transition_channels: usize,
}

impl AelanConfig {
    pub fn new(in_channels: usize, out_channels: usize, csp_depth: usize, use_deformable: bool) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || in_channels % 2 != 0 {
            return Err(Error::Config(format!(
                "aggregation block needs positive widths and an even input width, got {in_channels} -> {out_channels}"
            )));
        }
        if csp_depth == 0 {
            return Err(Error::Config("csp_depth must be at least 1".into()));
        }
        let half = in_channels / 2;
        Ok(Self { in_channels, out_channels, csp_depth, use_deformable, transition_channels: 2 * half + csp_depth * half })
    }

    pub fn half(&self) -> usize {
        self.in_channels / 2
    }
}

/// Residual CSP unit: `x + f(f(x))` where `f` is a 3x3 conv, group norm and
/// SiLU.
#[derive(Clone, Debug)]
pub struct CspUnit {
    pub conv1: ConvUnit,
    pub conv2: ConvUnit,
}

impl CspUnit {
    fn build<T: Real>(b: &mut Builder<'_, T>, name: &str, channels: usize, deformable: bool) -> Self {
        b.scoped(name, |b| {
            let mut unit = |n: &str| {
                if deformable {
                    ConvUnit::Deformable(b.norm_deform_conv(n, channels, channels, 3))
                } else {
                    ConvUnit::Standard(b.norm_conv(n, channels, channels, ConvGeom::same(3)))
                }
            };
            let conv1 = unit("conv1");
            let conv2 = unit("conv2");
            Self { conv1, conv2 }
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(ctx, x)?;
        let h = self.conv2.forward(ctx, h)?;
        ctx.tape.add(x, h)
    }
}

/// Split-aggregate block: the input's channel halves `a | b`, `b` runs
/// through `csp_depth` CSP units, and `[a, b, u1, .., ud]` is fused by a 1x1
/// transition.
#[derive(Clone, Debug)]
pub struct AelanBlock {
    pub config: AelanConfig,
    pub units: Vec<CspUnit>,
    pub transition: Conv,
}

impl AelanBlock {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, name: &str, config: AelanConfig) -> Self {
        b.scoped(name, |b| {
            let half = config.half();
            let units = (0..config.csp_depth)
                .map(|i| CspUnit::build(b, &format!("csp{i}"), half, config.use_deformable))
                .collect();
            let transition = b.norm_conv("transition", config.transition_channels, config.out_channels, ConvGeom::same(1));
            Self { config, units, transition }
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let c = ctx.tape.shape(x).c;
        if c != self.config.in_channels {
            return Err(Error::ChannelMismatch { op: "aelan_block", expected: self.config.in_channels, got: c });
        }
        let half = self.config.half();
        let a = ctx.tape.slice_channels(x, 0, half)?;
        let mut cur = ctx.tape.slice_channels(x, half, half)?;
        let mut parts = Vec::with_capacity(2 + self.units.len());
        parts.push(a);
        parts.push(cur);
        for unit in &self.units {
            cur = unit.forward(ctx, cur)?;
            parts.push(cur);
        }
        let cat = ctx.tape.concat(&parts)?;
        self.transition.forward(ctx, cat)
    }
}

/// Channel widths of the pyramid.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Widths {
    pub stem: usize,
    pub p3: usize,
    pub p4: usize,
    pub p5: usize,
}

impl Default for Widths {
    fn default() -> Self {
        Self { stem: 16, p3: 32, p4: 64, p5: 128 }
    }
}

/// Which of the three contributions are switched on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Ablation {
    pub aelan: bool,
    pub mpda: bool,
    pub rmpda: bool,
}

impl Ablation {
    pub const NAMES: [&'static str; 6] = ["m1", "m2", "m3", "m4", "m5", "m6"];

    /// The six ablation models: M1 baseline, M2 AELAN, M3 MPDA, M4 RMPDA,
    /// M5 MPDA+RMPDA, M6 all three.
    pub fn from_name(name: &str) -> Result<Self> {
        let (aelan, mpda, rmpda) = match name.to_ascii_lowercase().as_str() {
            "m1" => (false, false, false),
            "m2" => (true, false, false),
            "m3" => (false, true, false),
            "m4" => (false, false, true),
            "m5" => (false, true, true),
            "m6" => (true, true, true),
            other => {
                return Err(Error::Config(format!(
                    "unknown model '{other}', expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        };
        Ok(Self { aelan, mpda, rmpda })
    }

    pub fn name(&self) -> Option<&'static str> {
        Self::NAMES.iter().copied().find(|n| Self::from_name(n).ok() == Some(*self))
    }
}

/// Backbone + neck settings.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub widths: Widths,
    pub csp_depth: usize,
    pub ablation: Ablation,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self { in_channels: 1, widths: Widths::default(), csp_depth: 2, ablation: Ablation::from_name("m6").unwrap() }
    }
}

/// Pyramid outputs at strides 8, 16 and 32.
#[derive(Clone, Copy, Debug)]
pub struct PyramidFeatures {
    pub p3: Var,
    pub p4: Var,
    pub p5: Var,
}

impl PyramidFeatures {
    pub fn levels(&self) -> [Var; 3] {
        [self.p3, self.p4, self.p5]
    }
}

pub const STRIDES: [usize; 3] = [8, 16, 32];

/// Stem, three downsample+block stages, and a top-down/bottom-up neck.
///
/// MPDA follows the P3 stage; RMPDA follows the P5 stage and the deepest neck
/// merge.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    stem: [Conv; 2],
    down: [Conv; 3],
    stages: [AelanBlock; 3],
    mpda: Option<DualAttentionBlock>,
    rmpda: Option<DualAttentionBlock>,
    // neck
    reduce: [Conv; 4],
    neck_blocks: [AelanBlock; 4],
    neck_down: [Conv; 2],
    neck_rmpda: Option<DualAttentionBlock>,
}

impl Backbone {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, config: BackboneConfig) -> Result<Self> {
        let w = config.widths.clone();
        let d = config.csp_depth;
        let deform = config.ablation.aelan;
        let block = |b: &mut Builder<'_, T>, name: &str, c: usize| -> Result<AelanBlock> {
            Ok(AelanBlock::build(b, name, AelanConfig::new(c, c, d, deform)?))
        };
        let s3 = ConvGeom::square(3, 2, 1);
        let stem = [
            b.norm_conv("stem1", config.in_channels, w.stem, s3),
            b.norm_conv("stem2", w.stem, w.stem, s3),
        ];
        let down3 = b.norm_conv("down3", w.stem, w.p3, s3);
        let stage3 = block(b, "stage3", w.p3)?;
        let mpda = if config.ablation.mpda {
            Some(DualAttentionBlock::build(b, "mpda3", DualAttentionConfig::mpda(w.p3)?.with_min_spatial(1)))
        } else {
            None
        };
        let down4 = b.norm_conv("down4", w.p3, w.p4, s3);
        let stage4 = block(b, "stage4", w.p4)?;
        let down5 = b.norm_conv("down5", w.p4, w.p5, s3);
        let stage5 = block(b, "stage5", w.p5)?;
        let rmpda = if config.ablation.rmpda {
            Some(DualAttentionBlock::build(b, "rmpda5", DualAttentionConfig::rmpda(w.p5)?.with_min_spatial(1)))
        } else {
            None
        };
        let one = ConvGeom::same(1);
        let reduce = [
            b.norm_conv("neck.reduce_td4", w.p5 + w.p4, w.p4, one),
            b.norm_conv("neck.reduce_td3", w.p4 + w.p3, w.p3, one),
            b.norm_conv("neck.reduce_bu4", w.p3 + w.p4, w.p4, one),
            b.norm_conv("neck.reduce_bu5", w.p4 + w.p5, w.p5, one),
        ];
        let neck_blocks = [
            block(b, "neck.td4", w.p4)?,
            block(b, "neck.td3", w.p3)?,
            block(b, "neck.bu4", w.p4)?,
            block(b, "neck.bu5", w.p5)?,
        ];
        let neck_down = [b.norm_conv("neck.down4", w.p3, w.p3, s3), b.norm_conv("neck.down5", w.p4, w.p4, s3)];
        let neck_rmpda = if config.ablation.rmpda {
            Some(DualAttentionBlock::build(b, "neck.rmpda5", DualAttentionConfig::rmpda(w.p5)?.with_min_spatial(1)))
        } else {
            None
        };
        Ok(Self {
            config,
            stem,
            down: [down3, down4, down5],
            stages: [stage3, stage4, stage5],
            mpda,
            rmpda,
            reduce,
            neck_blocks,
            neck_down,
            neck_rmpda,
        })
    }

    /// Backbone pyramid before the neck.
    pub fn pyramid<T: Real>(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<PyramidFeatures> {
        let s = ctx.tape.shape(image);
        if s.h % 32 != 0 || s.w % 32 != 0 || s.h == 0 || s.w == 0 {
            return Err(Error::Config(format!("image size {}x{} must be a positive multiple of 32", s.h, s.w)));
        }
        if s.c != self.config.in_channels {
            return Err(Error::ChannelMismatch { op: "backbone", expected: self.config.in_channels, got: s.c });
        }
        let mut x = self.stem[0].forward(ctx, image)?;
        x = self.stem[1].forward(ctx, x)?;
        x = self.down[0].forward(ctx, x)?;
        x = self.stages[0].forward(ctx, x)?;
        if let Some(m) = &self.mpda {
            x = m.forward(ctx, x)?;
        }
        let p3 = x;
        x = self.down[1].forward(ctx, x)?;
        let p4 = self.stages[1].forward(ctx, x)?;
        x = self.down[2].forward(ctx, p4)?;
        x = self.stages[2].forward(ctx, x)?;
        if let Some(m) = &self.rmpda {
            x = m.forward(ctx, x)?;
        }
        Ok(PyramidFeatures { p3, p4, p5: x })
    }

    /// Full backbone + neck; returns the three head inputs.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<PyramidFeatures> {
        let PyramidFeatures { p3, p4, p5 } = self.pyramid(ctx, image)?;
        let up5 = ctx.tape.upsample2x(p5)?;
        let t4 = ctx.tape.concat(&[up5, p4])?;
        let t4 = self.reduce[0].forward(ctx, t4)?;
        let n4 = self.neck_blocks[0].forward(ctx, t4)?;

        let up4 = ctx.tape.upsample2x(n4)?;
        let t3 = ctx.tape.concat(&[up4, p3])?;
        let t3 = self.reduce[1].forward(ctx, t3)?;
        let n3 = self.neck_blocks[1].forward(ctx, t3)?;

        let d4 = self.neck_down[0].forward(ctx, n3)?;
        let b4 = ctx.tape.concat(&[d4, n4])?;
        let b4 = self.reduce[2].forward(ctx, b4)?;
        let o4 = self.neck_blocks[2].forward(ctx, b4)?;

        let d5 = self.neck_down[1].forward(ctx, o4)?;
        let b5 = ctx.tape.concat(&[d5, p5])?;
        let b5 = self.reduce[3].forward(ctx, b5)?;
        let mut o5 = self.neck_blocks[3].forward(ctx, b5)?;
        if let Some(m) = &self.neck_rmpda {
            o5 = m.forward(ctx, o5)?;
        }
        Ok(PyramidFeatures { p3: n3, p4: o4, p5: o5 })
    }
}
