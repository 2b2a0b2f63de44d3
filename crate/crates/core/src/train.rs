//! SGD training with momentum and a cosine learning-rate schedule.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::Ablation;
use crate::data::Sample;
use crate::detect::{assign_targets, decode, loss_on_tape, nms, Detection, Detector, LossBreakdown, LossWeights};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport, DEFAULT_CONF_THRESHOLD};
use crate::nn::Ctx;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub image_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    /// Backpropagate `batch_size x` the mean loss rather than the mean.
    pub scale_by_batch: bool,
    pub seed: u64,
    pub ablation: Ablation,
    pub loss_weights: LossWeights,
    /// Validation every this many epochs (and after the last); 0 only after
    /// the last.
    pub eval_every: usize,
    pub conf_threshold: f64,
    pub nms_iou: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            image_size: 160,
            batch_size: 16,
            epochs: 300,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            grad_clip: 10.0,
            scale_by_batch: true,
            seed: 0,
            ablation: Ablation::from_name("m6").expect("m6"),
            loss_weights: LossWeights::default(),
            eval_every: 0,
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            nms_iou: 0.6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 32 != 0 {
            return Err(Error::Config(alloc::format!("image_size {} is not a positive multiple of 32", self.image_size)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning_rate, momentum or weight_decay out of range".into()));
        }
        Ok(())
    }

    /// Cosine decay from `learning_rate` at the first epoch to 1% of it at
    /// the last.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let lo = 0.01 * self.learning_rate;
        if self.epochs <= 1 {
            return self.learning_rate;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        lo + 0.5 * (self.learning_rate - lo) * (1.0 + libm::cos(PI * t))
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
    pub metrics: Option<MetricsReport>,
}

/// Stacks the images of `samples` into one batch tensor.
pub fn batch_images<T: Real>(samples: &[&Sample]) -> Result<Tensor<T>> {
    let parts: Vec<Tensor<f32>> = samples.iter().map(|s| s.image.clone()).collect();
    Ok(Tensor::stack_batch(&parts)?.cast())
}

/// Momentum buffers, one per parameter.
pub struct Sgd<T> {
    velocity: Vec<Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(model: &Detector<T>) -> Self {
        Self { velocity: model.params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect() }
    }

    /// `v = momentum * v + g + wd * w; w -= lr * v`, where `g` is the
    /// gradient times `loss_scale`, scaled down to norm `clip` when larger.
    pub fn step(&mut self, model: &mut Detector<T>, grads: &[Option<Tensor<T>>], lr: f64, config: &TrainConfig, loss_scale: f64) {
        let norm2: f64 = grads.iter().flatten().flat_map(|g| g.data()).map(|v| v.as_f64() * v.as_f64()).sum();
        let norm = libm::sqrt(norm2) * loss_scale;
        let clip = if config.grad_clip > 0.0 && norm > config.grad_clip { config.grad_clip / norm } else { 1.0 };
        let scale = clip * loss_scale;
        let (mu, wd, scale, lr) = (T::of_f64(config.momentum), T::of_f64(config.weight_decay), T::of_f64(scale), T::of_f64(lr));
        for ((w, v), g) in model.params.tensors_mut().iter_mut().zip(&mut self.velocity).zip(grads) {
            let Some(g) = g else { continue };
            for ((w, v), g) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *v = mu * *v + scale * *g + wd * *w;
                *w = *w - lr * *v;
            }
        }
    }
}

/// One optimisation step on `batch`; returns the loss before the update.
pub fn train_step<T: Real>(
    model: &mut Detector<T>,
    opt: &mut Sgd<T>,
    batch: &[&Sample],
    lr: f64,
    config: &TrainConfig,
) -> Result<LossBreakdown> {
    let geom = model.geometry();
    let images = batch_images::<T>(batch)?;
    let targets: Vec<_> = batch.iter().map(|s| assign_targets(&s.labels, &geom)).collect();
    let (breakdown, grads) = {
        let mut ctx = Ctx::new(&model.params, true);
        let x = ctx.tape.constant(images)?;
        let raw = model.forward(&mut ctx, x)?;
        let (loss, breakdown) = loss_on_tape(&mut ctx.tape, &raw, &targets, &geom, &config.loss_weights)?;
        if !breakdown.is_finite() {
            return Ok(breakdown);
        }
        ctx.tape.backward(loss)?;
        (breakdown, ctx.param_grads())
    };
    let loss_scale = if config.scale_by_batch { batch.len() as f64 } else { 1.0 };
    opt.step(model, &grads, lr, config, loss_scale);
    Ok(breakdown)
}

/// Detections per sample: decode at `decode_conf`, then NMS.
pub fn predict_samples<T: Real>(
    model: &Detector<T>,
    samples: &[Sample],
    decode_conf: f64,
    nms_iou: f64,
    batch_size: usize,
) -> Result<Vec<Vec<Detection>>> {
    let geom = model.geometry();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let raw = model.infer(&batch_images::<T>(&refs)?)?;
        let raw: Vec<&Tensor<T>> = raw.iter().collect();
        for n in 0..chunk.len() {
            out.push(nms(&decode(&raw, n, &geom, decode_conf), nms_iou));
        }
    }
    Ok(out)
}

/// Decode threshold used when ranking detections for AP.
pub const EVAL_DECODE_CONF: f64 = 0.001;

pub fn evaluate_model<T: Real>(model: &Detector<T>, samples: &[Sample], conf_threshold: f64, nms_iou: f64) -> Result<MetricsReport> {
    let preds = predict_samples(model, samples, EVAL_DECODE_CONF, nms_iou, 16)?;
    let gts: Vec<_> = samples.iter().map(|s| s.labels.clone()).collect();
    Ok(evaluate(&preds, &gts, conf_threshold, model.config.image_size, model.config.num_classes))
}

/// Runs `config.epochs` epochs over `train`, calling `on_epoch` after each.
pub fn train<T: Real>(
    model: &mut Detector<T>,
    train: &[Sample],
    val: Option<&[Sample]>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if model.config.image_size != config.image_size {
        return Err(Error::Config(alloc::format!(
            "model expects {} px images, config says {}",
            model.config.image_size,
            config.image_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Sgd::new(model);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let b = train_step(model, &mut opt, &batch, lr, config)?;
            if !b.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            sum.box_loss += b.box_loss;
            sum.objectness_loss += b.objectness_loss;
            sum.class_loss += b.class_loss;
            sum.total += b.total;
            batches += 1;
        }
        let k = 1.0 / batches as f64;
        let loss = LossBreakdown {
            box_loss: sum.box_loss * k,
            objectness_loss: sum.objectness_loss * k,
            class_loss: sum.class_loss * k,
            total: sum.total * k,
        };
        let last = epoch + 1 == config.epochs;
        let due = config.eval_every > 0 && (epoch + 1) % config.eval_every == 0;
        let metrics = match val {
            Some(v) if !v.is_empty() && (last || due) => Some(evaluate_model(model, v, config.conf_threshold, config.nms_iou)?),
            _ => None,
        };
        let entry = EpochLog { epoch, lr, loss, metrics };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        let c = TrainConfig { epochs: 11, ..TrainConfig::default() };
        assert!((c.lr_at(0) - 0.01).abs() < 1e-15);
        assert!((c.lr_at(10) - 1e-4).abs() < 1e-15);
        assert!(c.lr_at(5) < c.lr_at(4));
    }
}
