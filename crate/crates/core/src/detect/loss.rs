//! Composite detection loss: `5 * (1 - CIoU)` on positive cells, objectness
//! BCE on all cells, class BCE on positive cells (weights configurable).
//! Objectness sums background cells over the cell count and object cells
//! over the object count.
//!
//! The loss is evaluated in 64-bit and recorded on the tape as a single node
//! with its gradient precomputed; box-term gradients come from forward-mode
//! dual numbers over the four raw box outputs.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::{Add, Div, Mul, Neg, Sub};

use super::assign::{HeadGeometry, Target};
use super::boxes::BoundingBox;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub bbox: f64,
    pub objectness: f64,
    pub class: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { bbox: 5.0, objectness: 1.0, class: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub box_loss: f64,
    pub objectness_loss: f64,
    pub class_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.box_loss.is_finite() && self.objectness_loss.is_finite() && self.class_loss.is_finite() && self.total.is_finite()
    }
}

pub const TW_CLAMP: f64 = 4.0;
const CIOU_EPS: f64 = 1e-9;

/// Minimal scalar interface shared by `f64` and [`Dual`].
pub(crate) trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn val(self) -> f64;
    fn atan(self) -> Self;
    fn sigmoid(self) -> Self;
    /// `exp(min(self, TW_CLAMP))`.
    fn clamped_exp(self) -> Self;

    fn max(self, o: Self) -> Self {
        if self.val() >= o.val() {
            self
        } else {
            o
        }
    }

    fn min(self, o: Self) -> Self {
        if self.val() <= o.val() {
            self
        } else {
            o
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    crate::tape::sigmoid_scalar(v)
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn val(self) -> f64 {
        self
    }
    fn atan(self) -> Self {
        libm::atan(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
    fn clamped_exp(self) -> Self {
        libm::exp(self.min(TW_CLAMP))
    }
}

/// Value plus gradient w.r.t. four inputs.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Dual {
    pub v: f64,
    pub d: [f64; 4],
}

impl Dual {
    pub fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; 4];
        d[i] = 1.0;
        Self { v, d }
    }

    fn chain(self, v: f64, dv: f64) -> Self {
        Self { v, d: self.d.map(|x| x * dv) }
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { v: self.v + o.v, d: core::array::from_fn(|i| self.d[i] + o.d[i]) }
    }
}

impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self { v: self.v - o.v, d: core::array::from_fn(|i| self.d[i] - o.d[i]) }
    }
}

impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self { v: self.v * o.v, d: core::array::from_fn(|i| self.d[i] * o.v + self.v * o.d[i]) }
    }
}

impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        Self { v: self.v * inv, d: core::array::from_fn(|i| (self.d[i] - self.v * inv * o.d[i]) * inv) }
    }
}

impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Self { v: -self.v, d: self.d.map(|x| -x) }
    }
}

impl Scalar for Dual {
    fn cst(v: f64) -> Self {
        Self { v, d: [0.0; 4] }
    }
    fn val(self) -> f64 {
        self.v
    }
    fn atan(self) -> Self {
        self.chain(libm::atan(self.v), 1.0 / (1.0 + self.v * self.v))
    }
    fn sigmoid(self) -> Self {
        let s = sigmoid(self.v);
        self.chain(s, s * (1.0 - s))
    }
    fn clamped_exp(self) -> Self {
        if self.v > TW_CLAMP {
            Self::cst(libm::exp(TW_CLAMP))
        } else {
            let e = libm::exp(self.v);
            self.chain(e, e)
        }
    }
}

/// Pixel-space `(cx, cy, w, h)` predicted by raw outputs `t` at a cell.
pub(crate) fn decode_cell<S: Scalar>(t: [S; 4], row: usize, col: usize, stride: f64) -> [S; 4] {
    let s = S::cst(stride);
    [
        (S::cst(col as f64) + t[0].sigmoid()) * s,
        (S::cst(row as f64) + t[1].sigmoid()) * s,
        t[2].clamped_exp() * S::cst(4.0 * stride),
        t[3].clamped_exp() * S::cst(4.0 * stride),
    ]
}

/// Complete IoU between a predicted and a ground-truth `(cx, cy, w, h)`.
pub(crate) fn ciou<S: Scalar>(p: [S; 4], g: [f64; 4]) -> S {
    let half = S::cst(0.5);
    let (px0, px1) = (p[0] - p[2] * half, p[0] + p[2] * half);
    let (py0, py1) = (p[1] - p[3] * half, p[1] + p[3] * half);
    let (gx0, gx1) = (S::cst(g[0] - g[2] / 2.0), S::cst(g[0] + g[2] / 2.0));
    let (gy0, gy1) = (S::cst(g[1] - g[3] / 2.0), S::cst(g[1] + g[3] / 2.0));
    let zero = S::cst(0.0);
    let iw = (px1.min(gx1) - px0.max(gx0)).max(zero);
    let ih = (py1.min(gy1) - py0.max(gy0)).max(zero);
    let inter = iw * ih;
    let union = p[2] * p[3] + S::cst(g[2] * g[3]) - inter + S::cst(CIOU_EPS);
    let iou = inter / union;
    let cw = px1.max(gx1) - px0.min(gx0);
    let ch = py1.max(gy1) - py0.min(gy0);
    let c2 = cw * cw + ch * ch + S::cst(CIOU_EPS);
    let dx = p[0] - S::cst(g[0]);
    let dy = p[1] - S::cst(g[1]);
    let rho2 = dx * dx + dy * dy;
    let da = S::cst(libm::atan(g[2] / g[3])) - (p[2] / p[3]).atan();
    let v = S::cst(4.0 / (PI * PI)) * da * da;
    let alpha = v / (S::cst(1.0) - iou + v + S::cst(CIOU_EPS));
    iou - rho2 / c2 - alpha * v
}

fn gt_pixels(b: &BoundingBox, image_size: usize) -> [f64; 4] {
    let s = image_size as f64;
    [b.cx * s, b.cy * s, b.w * s, b.h * s]
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

fn bce_logits(x: f64, target: f64) -> f64 {
    softplus(x) - target * x
}

/// Loss value and its gradient w.r.t. each level's raw output.
///
/// `raw[l]` is `(N, 5 + classes, H_l, W_l)`; `targets[n]` lists image `n`'s
/// assigned targets. With no positives the box and class terms are zero.
pub fn compute_loss<T: Real>(
    raw: &[&Tensor<T>],
    targets: &[Vec<Target>],
    geom: &HeadGeometry,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<Tensor<T>>)> {
    if raw.len() != geom.strides.len() {
        return Err(Error::ShapeMismatch { op: "compute_loss", detail: alloc::format!("{} levels", raw.len()) });
    }
    let n = raw[0].shape().n;
    if targets.len() != n {
        return Err(Error::ShapeMismatch {
            op: "compute_loss",
            detail: alloc::format!("{} target lists for batch of {n}", targets.len()),
        });
    }
    for (l, t) in raw.iter().enumerate() {
        let s = t.shape();
        let g = geom.grid(l);
        if s.n != n || s.c != geom.channels() || s.h != g || s.w != g {
            return Err(Error::ShapeMismatch { op: "compute_loss", detail: alloc::format!("level {l} has shape {s}") });
        }
    }
    let nc = geom.num_classes;
    let cells: usize = raw.iter().map(|t| t.shape().n * t.shape().plane()).sum();
    let positives: usize = targets.iter().map(Vec::len).sum();

    let mut grads: Vec<Vec<f64>> = raw.iter().map(|t| vec![0.0; t.len()]).collect();
    let mut obj_targets: Vec<Vec<f64>> = raw.iter().map(|t| vec![0.0; t.shape().n * t.shape().plane()]).collect();
    for (img, ts) in targets.iter().enumerate() {
        for t in ts {
            let g = geom.grid(t.level);
            obj_targets[t.level][img * g * g + t.row * g + t.col] = 1.0;
        }
    }

    // Background cells are averaged over every cell, object cells over the
    // object count, so a handful of positives is not drowned out.
    let (mut neg_sum, mut pos_sum) = (0.0, 0.0);
    let inv_cells = 1.0 / cells as f64;
    let inv_obj = 1.0 / positives.max(1) as f64;
    for (l, t) in raw.iter().enumerate() {
        let s = t.shape();
        let p = s.plane();
        for img in 0..s.n {
            let base = (img * s.c + 4) * p;
            for i in 0..p {
                let x = t.data()[base + i].as_f64();
                if obj_targets[l][img * p + i] == 1.0 {
                    pos_sum += bce_logits(x, 1.0);
                    grads[l][base + i] = (sigmoid(x) - 1.0) * inv_obj;
                } else {
                    neg_sum += bce_logits(x, 0.0);
                    grads[l][base + i] = sigmoid(x) * inv_cells;
                }
            }
        }
    }
    let objectness_loss = neg_sum * inv_cells + pos_sum * inv_obj;

    let (mut box_sum, mut cls_sum) = (0.0, 0.0);
    if positives > 0 {
        let inv_pos = 1.0 / positives as f64;
        let inv_cls = 1.0 / (positives * nc) as f64;
        for (img, ts) in targets.iter().enumerate() {
            for t in ts {
                let raw_l = raw[t.level];
                let s = raw_l.shape();
                let at = |c: usize| s.index(img, c, t.row, t.col);
                let tb: [Dual; 4] = core::array::from_fn(|k| Dual::var(raw_l.data()[at(k)].as_f64(), k));
                let stride = geom.strides[t.level] as f64;
                let pred = decode_cell(tb, t.row, t.col, stride);
                let loss = Dual::cst(1.0) - ciou(pred, gt_pixels(&t.bbox, geom.image_size));
                box_sum += loss.v;
                for k in 0..4 {
                    grads[t.level][at(k)] += loss.d[k] * inv_pos * weights.bbox;
                }
                for c in 0..nc {
                    let x = raw_l.data()[at(5 + c)].as_f64();
                    let target = if c == t.bbox.class_id { 1.0 } else { 0.0 };
                    cls_sum += bce_logits(x, target);
                    grads[t.level][at(5 + c)] += (sigmoid(x) - target) * inv_cls * weights.class;
                }
            }
        }
        box_sum *= inv_pos;
        cls_sum *= inv_cls;
    }
    if weights.objectness != 1.0 {
        for (l, t) in raw.iter().enumerate() {
            let s = t.shape();
            for img in 0..s.n {
                let base = (img * s.c + 4) * s.plane();
                for v in &mut grads[l][base..base + s.plane()] {
                    *v *= weights.objectness;
                }
            }
        }
    }
    let total = weights.bbox * box_sum + weights.objectness * objectness_loss + weights.class * cls_sum;
    let breakdown = LossBreakdown { box_loss: box_sum, objectness_loss, class_loss: cls_sum, total };
    let grads = raw
        .iter()
        .zip(grads)
        .map(|(t, g)| Tensor::new(t.shape(), g.into_iter().map(T::of_f64).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok((breakdown, grads))
}

/// Records the loss on `tape` and returns its scalar node.
pub fn loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    raw: &[Var],
    targets: &[Vec<Target>],
    geom: &HeadGeometry,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let values: Vec<&Tensor<T>> = raw.iter().map(|v| tape.value(*v)).collect();
    let (breakdown, grads) = compute_loss(&values, targets, geom, weights)?;
    if !breakdown.is_finite() && tape.is_strict() {
        return Err(Error::NonFinite { op: "compute_loss" });
    }
    let v = tape.precomputed(T::of_f64(breakdown.total), raw, grads)?;
    Ok((v, breakdown))
}
