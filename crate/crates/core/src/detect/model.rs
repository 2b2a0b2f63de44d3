use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::assign::HeadGeometry;
use super::boxes::Detection;
use super::decode::decode;
use super::nms::nms;
use crate::backbone::{Ablation, Backbone, BackboneConfig, Widths};
use crate::error::{Error, Result};
use crate::kernels::ConvGeom;
use crate::nn::{Builder, Conv, Ctx, Params};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Initial objectness probability of every cell.
pub const OBJECTNESS_PRIOR: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub num_classes: usize,
    pub image_size: usize,
}

impl ModelConfig {
    pub fn new(ablation: Ablation, image_size: usize) -> Self {
        Self { backbone: BackboneConfig { ablation, ..BackboneConfig::default() }, num_classes: 2, image_size }
    }

    pub fn geometry(&self) -> HeadGeometry {
        HeadGeometry::new(self.image_size, self.num_classes)
    }

    /// Recovers the architecture from a parameter store's names and shapes.
    pub fn from_params<T: Real>(params: &Params<T>, image_size: usize) -> Result<Self> {
        let shape_of = |name: &str| {
            params
                .id_of(name)
                .map(|id| params.get(id).shape())
                .ok_or_else(|| Error::Config(format!("weights lack layer '{name}'")))
        };
        let stem = shape_of("stem1.weight")?;
        let widths = Widths {
            stem: stem.n,
            p3: shape_of("down3.weight")?.n,
            p4: shape_of("down4.weight")?.n,
            p5: shape_of("down5.weight")?.n,
        };
        let pred = shape_of("head0.pred.weight")?;
        if pred.n < 6 {
            return Err(Error::Config(format!("head predicts {} channels", pred.n)));
        }
        let names: Vec<&str> = params.iter().map(|(n, _)| n).collect();
        let csp_depth = (0..).take_while(|i| names.iter().any(|n| n.starts_with(&format!("stage3.csp{i}.")))).count();
        let ablation = Ablation {
            aelan: names.iter().any(|n| n.contains(".offset.")),
            mpda: names.iter().any(|n| n.starts_with("mpda3.")),
            rmpda: names.iter().any(|n| n.starts_with("rmpda5.")),
        };
        Ok(Self {
            backbone: BackboneConfig { in_channels: stem.c, widths, csp_depth, ablation },
            num_classes: pred.n - 5,
            image_size,
        })
    }
}

#[derive(Clone, Debug)]
struct HeadLevel {
    stem: Conv,
    pred: Conv,
}

/// Backbone, neck and a per-level `3x3 -> 1x1` prediction head.
#[derive(Clone, Debug)]
pub struct Detector<T> {
    pub config: ModelConfig,
    backbone: Backbone,
    heads: [HeadLevel; 3],
    pub params: Params<T>,
}

impl<T: Real> Detector<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.image_size == 0 || config.image_size % 32 != 0 {
            return Err(Error::Config(format!("image size {} is not a positive multiple of 32", config.image_size)));
        }
        if config.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        let mut params = Params::new();
        let mut b = Builder::new(&mut params, ChaCha8Rng::seed_from_u64(seed));
        let backbone = Backbone::build(&mut b, config.backbone.clone())?;
        let w = config.backbone.widths.clone();
        let outs = config.num_classes + 5;
        let mut level = |l: usize, c: usize| {
            b.scoped(&format!("head{l}"), |b| HeadLevel {
                stem: b.norm_conv("stem", c, c, ConvGeom::same(3)),
                pred: b.conv("pred", c, outs, ConvGeom::same(1), false),
            })
        };
        let heads = [level(0, w.p3), level(1, w.p4), level(2, w.p5)];
        let prior = libm::log(OBJECTNESS_PRIOR / (1.0 - OBJECTNESS_PRIOR));
        for h in &heads {
            let bias = h.pred.bias.expect("pred has bias");
            params.get_mut(bias).data_mut()[4] = T::of_f64(prior);
        }
        Ok(Self { config, backbone, heads, params })
    }

    /// Rebuilds a detector around stored parameters; the layer census
    /// decides the architecture.
    pub fn from_params(params: Params<T>, image_size: usize) -> Result<Self> {
        let config = ModelConfig::from_params(&params, image_size)?;
        let mut model = Self::new(config, 0)?;
        model.params.load_from(&params)?;
        Ok(model)
    }

    pub fn geometry(&self) -> HeadGeometry {
        self.config.geometry()
    }

    pub fn cast<U: Real>(&self) -> Detector<U> {
        Detector {
            config: self.config.clone(),
            backbone: self.backbone.clone(),
            heads: self.heads.clone(),
            params: self.params.cast(),
        }
    }

    /// Raw predictions per level, `(N, 5 + classes, H_l, W_l)`.
    pub fn forward(&self, ctx: &mut Ctx<'_, T>, images: Var) -> Result<[Var; 3]> {
        let s = ctx.tape.shape(images);
        if s.h != self.config.image_size || s.w != self.config.image_size {
            return Err(Error::ShapeMismatch {
                op: "detector",
                detail: format!("input {}x{}, model expects {}", s.h, s.w, self.config.image_size),
            });
        }
        let feats = self.backbone.forward(ctx, images)?.levels();
        let mut out = feats;
        for (l, head) in self.heads.iter().enumerate() {
            let h = head.stem.forward(ctx, feats[l])?;
            out[l] = head.pred.forward(ctx, h)?;
        }
        Ok(out)
    }

    /// Untracked forward pass.
    pub fn infer(&self, images: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut ctx = Ctx::new(&self.params, false);
        let x = ctx.tape.constant(images.clone())?;
        let out = self.forward(&mut ctx, x)?;
        Ok(out.iter().map(|v| ctx.tape.value(*v).clone()).collect())
    }

    /// Decoded, NMS-filtered detections for each image of the batch.
    pub fn predict(&self, images: &Tensor<T>, conf_threshold: f64, iou_threshold: f64) -> Result<Vec<Vec<Detection>>> {
        let raw = self.infer(images)?;
        let refs: Vec<&Tensor<T>> = raw.iter().collect();
        let geom = self.geometry();
        Ok((0..images.shape().n).map(|n| nms(&decode(&refs, n, &geom, conf_threshold), iou_threshold)).collect())
    }
}
