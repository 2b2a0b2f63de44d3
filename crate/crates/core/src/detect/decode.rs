use alloc::vec::Vec;

use super::assign::{HeadGeometry, Target};
use super::boxes::{BoundingBox, Detection};
use super::loss::{decode_cell, sigmoid, TW_CLAMP};
use crate::real::Real;
use crate::tensor::Tensor;

/// Detections of image `n` with confidence strictly above `conf_threshold`,
/// in level / row / column order.
pub fn decode<T: Real>(raw: &[&Tensor<T>], n: usize, geom: &HeadGeometry, conf_threshold: f64) -> Vec<Detection> {
    let img = geom.image_size as f64;
    let mut out = Vec::new();
    for (level, t) in raw.iter().enumerate() {
        let s = t.shape();
        let stride = geom.strides[level] as f64;
        let at = |c: usize, i: usize, j: usize| t.data()[s.index(n, c, i, j)].as_f64();
        for i in 0..s.h {
            for j in 0..s.w {
                let obj = sigmoid(at(4, i, j));
                let (mut class_id, mut best) = (0, f64::NEG_INFINITY);
                for c in 0..geom.num_classes {
                    let p = sigmoid(at(5 + c, i, j));
                    if p > best {
                        class_id = c;
                        best = p;
                    }
                }
                let confidence = obj * best;
                if !(confidence > conf_threshold) {
                    continue;
                }
                let raw_box = [at(0, i, j), at(1, i, j), at(2, i, j), at(3, i, j)];
                let [cx, cy, w, h] = decode_cell(raw_box, i, j, stride);
                let bbox = BoundingBox {
                    class_id,
                    cx: (cx / img).min(1.0),
                    cy: (cy / img).min(1.0),
                    w: (w / img).min(1.0),
                    h: (h / img).min(1.0),
                };
                out.push(Detection { bbox, confidence });
            }
        }
    }
    out
}

fn logit(p: f64) -> f64 {
    libm::log(p / (1.0 - p))
}

/// Raw `[tx, ty, tw, th]` that decode back to `target`'s box at its cell.
pub fn encode(target: &Target, geom: &HeadGeometry) -> [f64; 4] {
    let img = geom.image_size as f64;
    let s = geom.strides[target.level] as f64;
    let b = &target.bbox;
    let frac = |v: f64, cell: usize| (v * img / s - cell as f64).clamp(1e-9, 1.0 - 1e-9);
    let size = |v: f64| libm::log(v * img / geom.nominal_size(target.level)).min(TW_CLAMP);
    [logit(frac(b.cx, target.col)), logit(frac(b.cy, target.row)), size(b.w), size(b.h)]
}
