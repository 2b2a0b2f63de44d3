//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use birdrone_core::attention::{DualAttentionBlock, DualAttentionConfig};
use birdrone_core::backbone::{AelanBlock, AelanConfig};
use birdrone_core::detect::{BoundingBox, Detection};
use birdrone_core::nn::{Builder, Ctx, Params};
use birdrone_core::ops::{conv2d, deform_conv2d, DeformKernel, OffsetField};
use birdrone_core::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CLASSES: usize = 2;

pub fn random(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

/// Largest gap between zero-offset deformable conv and plain conv over 50
/// random geometries.
pub fn zero_offset_gap(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let n = rng.gen_range(1..3);
        let cin = rng.gen_range(1..5);
        let cout = rng.gen_range(1..5);
        let h = rng.gen_range(k.max(2)..12);
        let w = rng.gen_range(k.max(2)..12);
        let x = random(&mut rng, Shape::new(n, cin, h, w));
        let weight = random(&mut rng, Shape::new(cout, cin, k, k));
        let bias = rng.gen_bool(0.5).then(|| random(&mut rng, Shape::new(1, cout, 1, 1)));
        let kernel = DeformKernel::new(weight, bias).unwrap();
        let plain = conv2d(&x, &kernel, 1, k / 2).unwrap();
        let deformed = deform_conv2d(&x, &kernel, &OffsetField::zeros(n, k * k, h, w)).unwrap();
        assert_eq!(plain.shape(), deformed.shape());
        worst = worst.max(plain.max_abs_diff(&deformed));
    }
    worst
}

/// Output gap between an AELAN block with freshly zeroed offsets and the
/// GELAN block built from the same seed.
pub fn aelan_gelan_gap(depth: usize, seed: u64) -> f64 {
    let build = |deformable: bool| {
        let mut params = Params::<f64>::new();
        let cfg = AelanConfig::new(8, 12, depth, deformable).unwrap();
        let block = AelanBlock::build(&mut Builder::new(&mut params, ChaCha8Rng::seed_from_u64(seed)), "block", cfg);
        (params, block)
    };
    let (ap, aelan) = build(true);
    let (gp, gelan) = build(false);
    // the deformable variant only adds its (zero) offset branches
    for (name, t) in gp.iter() {
        let id = ap.id_of(name).unwrap_or_else(|| panic!("{name} missing"));
        assert_eq!(ap.get(id), t, "{name}");
    }
    assert!(ap.iter().filter(|(n, _)| n.contains(".offset.")).all(|(_, t)| t.max_abs() == 0.0));
    let x = random(&mut ChaCha8Rng::seed_from_u64(seed + 100), Shape::new(2, 8, 9, 9));
    let run = |params: &Params<f64>, block: &AelanBlock| {
        let mut ctx = Ctx::new(params, false);
        let v = ctx.tape.constant(x.clone()).unwrap();
        let y = block.forward(&mut ctx, v).unwrap();
        ctx.tape.value(y).clone()
    };
    run(&ap, &aelan).max_abs_diff(&run(&gp, &gelan))
}

const SIDE: usize = 21;

/// Side lengths of the region where each branch map reacts to a unit
/// impulse at the centre.
pub fn branch_supports(config: DualAttentionConfig, seed: u64) -> [(usize, usize); 4] {
    let mut params = Params::<f64>::new();
    let block = DualAttentionBlock::build(&mut Builder::new(&mut params, ChaCha8Rng::seed_from_u64(seed)), "blk", config.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(0.1..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        }
    }
    let maps = |x: Tensor<f64>| {
        let mut ctx = Ctx::new(&params, false);
        let v = ctx.tape.constant(x).unwrap();
        let b = block.multiscale_split(&mut ctx, v).unwrap();
        b.maps.map(|m| ctx.tape.value(m).clone())
    };
    let shape = Shape::new(1, config.channels, SIDE, SIDE);
    let mut impulse = Tensor::zeros(shape);
    impulse.set(0, 0, SIDE / 2, SIDE / 2, 1.0);
    let base = maps(Tensor::zeros(shape));
    let hit = maps(impulse);
    core::array::from_fn(|k| {
        let (a, b) = (&base[k], &hit[k]);
        let s = a.shape();
        let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    if a.get(0, c, y, x) != b.get(0, c, y, x) {
                        y0 = y0.min(y);
                        y1 = y1.max(y);
                        x0 = x0.min(x);
                        x1 = x1.max(x);
                    }
                }
            }
        }
        assert!(y0 <= y1, "branch {k} ignores the impulse");
        (y1 - y0 + 1, x1 - x0 + 1)
    })
}

pub fn oracle_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ax = (a.cx - a.w / 2.0, a.cx + a.w / 2.0);
    let ay = (a.cy - a.h / 2.0, a.cy + a.h / 2.0);
    let bx = (b.cx - b.w / 2.0, b.cx + b.w / 2.0);
    let by = (b.cy - b.h / 2.0, b.cy + b.h / 2.0);
    let ix = (ax.1.min(bx.1) - ax.0.max(bx.0)).max(0.0);
    let iy = (ay.1.min(by.1) - ay.0.max(by.0)).max(0.0);
    let inter = ix * iy;
    let union = a.w * a.h + b.w * b.h - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// True-positive flags for one class, ranked over the whole dataset.
pub fn oracle_hits(preds: &[Vec<Detection>], gts: &[Vec<BoundingBox>], thr: f64, class: usize) -> (Vec<bool>, usize) {
    let mut ranked = Vec::new();
    let mut num_gt = 0;
    for (img, (p, g)) in preds.iter().zip(gts).enumerate() {
        let gt: Vec<&BoundingBox> = g.iter().filter(|b| b.class_id == class).collect();
        num_gt += gt.len();
        let mut order: Vec<(usize, &Detection)> = p.iter().filter(|d| d.bbox.class_id == class).enumerate().collect();
        order.sort_by(|a, b| b.1.confidence.partial_cmp(&a.1.confidence).unwrap().then(a.0.cmp(&b.0)));
        let mut used = vec![false; gt.len()];
        for (idx, d) in order {
            let mut pick: Option<(usize, f64)> = None;
            for (k, g) in gt.iter().enumerate() {
                let v = oracle_iou(&d.bbox, g);
                if !used[k] && v >= thr && pick.map_or(true, |(_, best)| v > best) {
                    pick = Some((k, v));
                }
            }
            if let Some((k, _)) = pick {
                used[k] = true;
            }
            ranked.push((d.confidence, img, idx, pick.is_some()));
        }
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    (ranked.into_iter().map(|r| r.3).collect(), num_gt)
}

/// 101-point AP: for every recall level, the best precision of any ranking
/// prefix reaching it.
pub fn oracle_ap(hits: &[bool], num_gt: usize) -> f64 {
    let mut total = 0.0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        let mut best: f64 = 0.0;
        for k in 1..=hits.len() {
            let tp = hits[..k].iter().filter(|h| **h).count();
            if tp as f64 / num_gt as f64 >= level {
                best = best.max(tp as f64 / k as f64);
            }
        }
        total += best;
    }
    total / 101.0
}

pub fn oracle_map(preds: &[Vec<Detection>], gts: &[Vec<BoundingBox>], thr: f64) -> f64 {
    let aps: Vec<f64> = (0..CLASSES)
        .filter_map(|c| {
            let (hits, n) = oracle_hits(preds, gts, thr, c);
            (n > 0).then(|| oracle_ap(&hits, n))
        })
        .collect();
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

pub fn oracle_map50_95(preds: &[Vec<Detection>], gts: &[Vec<BoundingBox>]) -> f64 {
    (0..10).map(|k| oracle_map(preds, gts, (50 + 5 * k) as f64 / 100.0)).sum::<f64>() / 10.0
}

/// `(tp, fn, fp)` over detections at or above `conf`.
pub fn oracle_counts(preds: &[Vec<Detection>], gts: &[Vec<BoundingBox>], thr: f64, conf: f64) -> (usize, usize, usize) {
    let kept: Vec<Vec<Detection>> = preds.iter().map(|p| p.iter().copied().filter(|d| d.confidence >= conf).collect()).collect();
    let tp: usize = (0..CLASSES).map(|c| oracle_hits(&kept, gts, thr, c).0.iter().filter(|h| **h).count()).sum();
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    let n_det: usize = kept.iter().map(Vec::len).sum();
    (tp, n_gt - tp, n_det - tp)
}

/// Boxes on a coarse grid so that overlaps and exact ties are common.
fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let q = |rng: &mut ChaCha8Rng, lo: u32, hi: u32| rng.gen_range(lo..=hi) as f64 / 16.0;
    BoundingBox::new(rng.gen_range(0..CLASSES), q(rng, 4, 12), q(rng, 4, 12), q(rng, 1, 6), q(rng, 1, 6)).unwrap()
}

fn jitter(rng: &mut ChaCha8Rng, b: &BoundingBox) -> BoundingBox {
    let mut j = *b;
    j.cx += rng.gen_range(-2..=2) as f64 / 64.0;
    j.w = (j.w + rng.gen_range(-2..=2) as f64 / 64.0).max(1.0 / 64.0);
    if rng.gen_bool(0.2) {
        j.class_id = 1 - j.class_id;
    }
    j
}

/// One or two images with at most five boxes and five detections each.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<Detection>>, Vec<Vec<BoundingBox>>) {
    let images = rng.gen_range(1..=2);
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..images {
        let g: Vec<BoundingBox> = (0..rng.gen_range(0..=5)).map(|_| random_box(rng)).collect();
        let d: Vec<Detection> = (0..rng.gen_range(0..=5))
            .map(|_| {
                let bbox = if !g.is_empty() && rng.gen_bool(0.7) {
                    let src = g[rng.gen_range(0..g.len())];
                    jitter(rng, &src)
                } else {
                    random_box(rng)
                };
                Detection { bbox, confidence: rng.gen_range(1..=10) as f64 / 10.0 }
            })
            .collect();
        preds.push(d);
        gts.push(g);
    }
    (preds, gts)
}

/// The 1 GT / 1 detection pair at IoU exactly 0.6.
pub fn iou_point_six_pair() -> (Detection, BoundingBox) {
    let gt = BoundingBox::new(0, 0.5, 0.5, 0.625, 1.0).unwrap();
    let det = Detection { bbox: BoundingBox::new(0, 0.5, 0.5, 0.375, 1.0).unwrap(), confidence: 0.9 };
    (det, gt)
}
