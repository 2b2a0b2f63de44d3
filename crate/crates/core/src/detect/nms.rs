use alloc::vec::Vec;

use super::boxes::{iou, Detection};

/// Greedy per-class suppression: visit by descending confidence (earlier
/// index first on ties) and drop any detection whose IoU with an already
/// kept same-class detection is at least `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = &dets[i];
        let clash = kept
            .iter()
            .any(|k| k.bbox.class_id == d.bbox.class_id && iou(&k.bbox, &d.bbox) >= iou_threshold);
        if !clash {
            kept.push(*d);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::BoundingBox;

    fn det(c: usize, cx: f64, conf: f64) -> Detection {
        Detection { bbox: BoundingBox::new(c, cx, 0.5, 0.2, 0.2).unwrap(), confidence: conf }
    }

    #[test]
    fn duplicates_and_disjoint() {
        let out = nms(&[det(0, 0.5, 0.8), det(0, 0.5, 0.9)], 0.5);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].confidence, 0.9);
        let out = nms(&[det(0, 0.1, 0.8), det(0, 0.5, 0.9), det(0, 0.9, 0.7)], 0.5);
        assert_eq!(out.len(), 3);
        // other class is never suppressed
        let out = nms(&[det(0, 0.5, 0.8), det(1, 0.5, 0.9)], 0.5);
        assert_eq!(out.len(), 2);
    }
}
