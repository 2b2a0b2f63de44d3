//! Matching, precision/recall, COCO-style AP and the accuracy / FN / FP
//! accounting.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{size_bin, SizeBin};
use crate::detect::{iou, BoundingBox, Detection, CLASS_NAMES};

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    core::array::from_fn(|k| (50 + 5 * k) as f64 / 100.0)
}

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.25;

/// Outcome of matching one image's detections against its ground truth.
/// Indices refer to the caller's slices.
#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct ImageMatch {
    /// `(detection, ground truth)` pairs.
    pub tp: Vec<(usize, usize)>,
    pub fp: Vec<usize>,
    pub fn_gt: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct MatchResult {
    pub iou_threshold: f64,
    pub images: Vec<ImageMatch>,
}

impl MatchResult {
    /// `(TP, FN, FP)` summed over images.
    pub fn counts(&self) -> (usize, usize, usize) {
        self.images.iter().fold((0, 0, 0), |(t, n, p), m| (t + m.tp.len(), n + m.fn_gt.len(), p + m.fp.len()))
    }
}

/// Detection order: descending confidence, earlier index on ties.
fn by_confidence(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    order
}

/// Greedy matching: each detection, by descending confidence, takes the
/// unmatched ground truth with the highest IoU at or above the threshold
/// (same class when `class_aware`); ties go to the earlier ground truth.
pub fn match_detections(dets: &[Detection], gts: &[BoundingBox], iou_threshold: f64, class_aware: bool) -> ImageMatch {
    let mut taken = vec![false; gts.len()];
    let mut m = ImageMatch::default();
    for d in by_confidence(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || (class_aware && gt.class_id != dets[d].bbox.class_id) {
                continue;
            }
            let v = iou(&dets[d].bbox, gt);
            if v >= iou_threshold && best.map_or(true, |(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, _)) => {
                taken[g] = true;
                m.tp.push((d, g));
            }
            None => m.fp.push(d),
        }
    }
    m.fn_gt = (0..gts.len()).filter(|g| !taken[*g]).collect();
    m
}

/// Class-aware matching over a dataset of detections at or above
/// `conf_threshold`.
pub fn match_dataset(preds: &[Vec<Detection>], gts: &[Vec<BoundingBox>], iou_threshold: f64, conf_threshold: f64) -> MatchResult {
    let images = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| {
            let kept: Vec<Detection> = p.iter().copied().filter(|d| d.confidence >= conf_threshold).collect();
            match_detections(&kept, g, iou_threshold, true)
        })
        .collect();
    MatchResult { iou_threshold, images }
}

/// Area under the monotone precision envelope sampled at recall
/// `0, 0.01, ..., 1`. `hits` are TP flags in descending-confidence order.
pub fn interpolated_ap(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &h in hits {
        if h {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    let mut i = 0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        while i < recall.len() && recall[i] < level {
            i += 1;
        }
        if i < recall.len() {
            sum += precision[i];
        }
    }
    sum / 101.0
}

/// AP of one class at one IoU threshold; `None` when the class has no
/// ground truth.
pub fn average_precision(preds: &[Vec<Detection>], gts: &[Vec<BoundingBox>], iou_threshold: f64, class_id: usize) -> Option<f64> {
    let mut scored: Vec<(f64, usize, usize, bool)> = Vec::new();
    let mut num_gt = 0;
    for (img, (p, g)) in preds.iter().zip(gts).enumerate() {
        let dets: Vec<Detection> = p.iter().copied().filter(|d| d.bbox.class_id == class_id).collect();
        let gt: Vec<BoundingBox> = g.iter().copied().filter(|b| b.class_id == class_id).collect();
        num_gt += gt.len();
        let m = match_detections(&dets, &gt, iou_threshold, true);
        let mut hit = vec![false; dets.len()];
        for (d, _) in &m.tp {
            hit[*d] = true;
        }
        scored.extend(dets.iter().enumerate().map(|(i, d)| (d.confidence, img, i, hit[i])));
    }
    if num_gt == 0 {
        return None;
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let hits: Vec<bool> = scored.iter().map(|s| s.3).collect();
    Some(interpolated_ap(&hits, num_gt))
}

/// Mean AP over classes that have ground truth (0 when none do).
pub fn mean_ap(preds: &[Vec<Detection>], gts: &[Vec<BoundingBox>], iou_threshold: f64, num_classes: usize) -> f64 {
    let aps: Vec<f64> = (0..num_classes).filter_map(|c| average_precision(preds, gts, iou_threshold, c)).collect();
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

/// `(mAP@0.5, mAP@0.5:0.95)`.
pub fn map_range(preds: &[Vec<Detection>], gts: &[Vec<BoundingBox>], num_classes: usize) -> (f64, f64) {
    let per: Vec<f64> = iou_thresholds().iter().map(|t| mean_ap(preds, gts, *t, num_classes)).collect();
    (per[0], per.iter().sum::<f64>() / per.len() as f64)
}

/// Accuracy, FN and FP as percentages of `TP + FN + FP`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DetectionAccuracy {
    pub accuracy: f64,
    pub fn_pct: f64,
    pub fp_pct: f64,
    /// No ground truth and no detections; reported as `(100, 0, 0)`.
    pub empty: bool,
}

pub fn detection_accuracy(tp: usize, fn_count: usize, fp: usize) -> DetectionAccuracy {
    let t = tp + fn_count + fp;
    if t == 0 {
        return DetectionAccuracy { accuracy: 100.0, fn_pct: 0.0, fp_pct: 0.0, empty: true };
    }
    let t = t as f64;
    DetectionAccuracy {
        accuracy: 100.0 * tp as f64 / t,
        fn_pct: 100.0 * fn_count as f64 / t,
        fp_pct: 100.0 * fp as f64 / t,
        empty: false,
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassAp {
    pub class_id: usize,
    pub name: String,
    pub ap50: Option<f64>,
    pub ap50_95: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BinAp {
    pub bin: SizeBin,
    pub ground_truths: usize,
    pub ap50: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub images: usize,
    pub ground_truths: usize,
    pub detections: usize,
    pub conf_threshold: f64,
    /// At `conf_threshold`, IoU 0.5.
    pub precision: f64,
    pub recall: f64,
    /// At the confidence cut maximising F1.
    pub precision_best_f1: f64,
    pub recall_best_f1: f64,
    pub best_f1_confidence: f64,
    pub map50: f64,
    pub map50_95: f64,
    pub detection_accuracy: f64,
    pub fn_pct: f64,
    pub fp_pct: f64,
    pub per_class: Vec<ClassAp>,
    pub per_size_bin: Vec<BinAp>,
    /// Seconds per frame, when timed.
    pub ait_seconds: Option<f64>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// P/R at the confidence cut with the best F1 over all detections.
fn best_f1(preds: &[Vec<Detection>], gts: &[Vec<BoundingBox>]) -> (f64, f64, f64) {
    let num_gt: usize = gts.iter().map(Vec::len).sum();
    let mut confs: Vec<f64> = preds.iter().flatten().map(|d| d.confidence).collect();
    confs.sort_by(|a, b| b.total_cmp(a));
    confs.dedup();
    let mut best = (0.0, 0.0, 0.0, -1.0);
    for c in confs {
        let (tp, _, fp) = match_dataset(preds, gts, 0.5, c).counts();
        let (p, r) = (ratio(tp, tp + fp), ratio(tp, num_gt));
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        if f1 > best.3 {
            best = (p, r, c, f1);
        }
    }
    (best.0, best.1, best.2)
}

/// Full report for one split. Detections should come from a low decode
/// threshold so AP sees the whole ranking; `conf_threshold` applies to the
/// P/R and accuracy accounting.
pub fn evaluate(
    preds: &[Vec<Detection>],
    gts: &[Vec<BoundingBox>],
    conf_threshold: f64,
    image_size: usize,
    num_classes: usize,
) -> MetricsReport {
    let (map50, map50_95) = map_range(preds, gts, num_classes);
    let matched = match_dataset(preds, gts, 0.5, conf_threshold);
    let (tp, fn_count, fp) = matched.counts();
    let num_gt: usize = gts.iter().map(Vec::len).sum();
    let acc = detection_accuracy(tp, fn_count, fp);
    let (pb, rb, cb) = best_f1(preds, gts);
    let per_class = (0..num_classes)
        .map(|c| {
            let ap50 = average_precision(preds, gts, 0.5, c);
            let ap50_95 = ap50.map(|_| {
                let t = iou_thresholds();
                t.iter().map(|t| average_precision(preds, gts, *t, c).unwrap_or(0.0)).sum::<f64>() / t.len() as f64
            });
            ClassAp { class_id: c, name: CLASS_NAMES.get(c).copied().unwrap_or("class").into(), ap50, ap50_95 }
        })
        .collect();
    // detections and ground truth are both filtered to the bin
    let per_size_bin = SizeBin::ALL
        .iter()
        .map(|&bin| {
            let in_bin = |b: &BoundingBox| size_bin(b, image_size) == bin;
            let g: Vec<Vec<BoundingBox>> = gts.iter().map(|v| v.iter().copied().filter(in_bin).collect()).collect();
            let p: Vec<Vec<Detection>> = preds.iter().map(|v| v.iter().copied().filter(|d| in_bin(&d.bbox)).collect()).collect();
            let ground_truths = g.iter().map(Vec::len).sum();
            let ap50 = (ground_truths > 0).then(|| mean_ap(&p, &g, 0.5, num_classes));
            BinAp { bin, ground_truths, ap50 }
        })
        .collect();
    MetricsReport {
        images: gts.len(),
        ground_truths: num_gt,
        detections: preds.iter().map(Vec::len).sum(),
        conf_threshold,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, num_gt),
        precision_best_f1: pb,
        recall_best_f1: rb,
        best_f1_confidence: cb,
        map50,
        map50_95,
        detection_accuracy: acc.accuracy,
        fn_pct: acc.fn_pct,
        fp_pct: acc.fp_pct,
        per_class,
        per_size_bin,
        ait_seconds: None,
    }
}
