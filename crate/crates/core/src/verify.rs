//! Gradient-check suite over the building blocks, at 64-bit.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{Attention, AttentionKind, DualAttentionBlock, DualAttentionConfig};
use crate::backbone::{Ablation, AelanBlock, AelanConfig};
use crate::detect::{assign_targets, loss_on_tape, BoundingBox, Detector, HeadGeometry, LossWeights, ModelConfig};
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check_coords, GradCheck, DEFAULT_EPS};
use crate::kernels::ConvGeom;
use crate::nn::{Builder, Ctx, ParamId, Params};
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

pub const MODULES: [&str; 8] = ["dconv", "spatial", "channel", "mpda", "rmpda", "aelan", "loss", "model"];

/// Tolerance on the max relative error: single blocks, deep compositions,
/// and the whole detector.
pub const BLOCK_TOLERANCE: f64 = 1e-5;
pub const DEEP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SuiteEntry {
    pub module: &'static str,
    pub check: GradCheck,
    pub tolerance: f64,
    pub passed: bool,
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-scale..scale))
}

fn coords(rng: &mut ChaCha8Rng, len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let mut v = rand::seq::index::sample(rng, len, max).into_vec();
        v.sort_unstable();
        v
    }
}

fn worst(a: GradCheck, b: GradCheck) -> GradCheck {
    if b.max_rel_error > a.max_rel_error || !b.max_rel_error.is_finite() {
        GradCheck { coords_checked: a.coords_checked + b.coords_checked, ..b }
    } else {
        GradCheck { coords_checked: a.coords_checked + b.coords_checked, ..a }
    }
}

/// Scalar readout `sum(y * r)` with a fixed random `r`, so no gradient
/// entry is trivially symmetric.
fn readout(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = random_tensor(&mut rng, tape.shape(y), 1.0);
    let r = tape.constant(r)?;
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

/// Checks the input and every parameter tensor of a network built over
/// `params`, sampling at most `per_tensor` coordinates of each.
fn check_network<F>(params: &Params<f64>, input: &Tensor<f64>, forward: F, per_tensor: usize, seed: u64, corrupt: bool) -> Result<GradCheck>
where
    F: Fn(&mut Ctx<'_, f64>, Var) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let run = |tape: &mut Tape<f64>, x: Var, bind: Option<(ParamId, Var)>| -> Result<Var> {
        let t = core::mem::take(tape);
        let mut ctx = Ctx::with_tape(params, t, false);
        if let Some((id, v)) = bind {
            ctx.bind(id, v);
        }
        let out = forward(&mut ctx, x);
        *tape = ctx.tape;
        let y = out?;
        readout(tape, y, seed)
    };
    let c = coords(&mut rng, input.len(), per_tensor);
    let mut total = grad_check_coords(|t, v| run(t, v, None), input, DEFAULT_EPS, &c, corrupt)?;
    for id in params.ids() {
        let value = params.get(id).clone();
        let c = coords(&mut rng, value.len(), per_tensor);
        let r = grad_check_coords(
            |t, v| {
                let x = t.constant(input.clone())?;
                run(t, x, Some((id, v)))
            },
            &value,
            DEFAULT_EPS,
            &c,
            corrupt,
        )?;
        total = worst(total, r);
    }
    Ok(total)
}

/// Re-draws every parameter (zero-initialised ones included) so no branch
/// sits on a kink.
fn randomise(params: &mut Params<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

fn build<B>(seed: u64, f: impl FnOnce(&mut Builder<'_, f64>) -> Result<B>) -> Result<(Params<f64>, B)> {
    let mut params = Params::new();
    let block = f(&mut Builder::new(&mut params, ChaCha8Rng::seed_from_u64(seed)))?;
    Ok((params, block))
}

/// Offsets whose sampling points stay strictly between lattice lines.
fn off_lattice_offsets(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let whole = rng.gen_range(-1i32..=1) as f64;
        let frac = rng.gen_range(0.2..0.8);
        whole + frac
    })
}

fn dconv(seed: u64, corrupt: bool) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, Shape::new(2, 3, 6, 6), 1.0);
    let off = off_lattice_offsets(&mut rng, Shape::new(2, 18, 6, 6));
    let w = random_tensor(&mut rng, Shape::new(4, 3, 3, 3), 0.5);
    let b = random_tensor(&mut rng, Shape::new(1, 4, 1, 1), 0.5);
    let g = ConvGeom::same(3);
    let args = [x, off, w, b];
    let mut total: Option<GradCheck> = None;
    for target in 0..args.len() {
        let c = coords(&mut rng, args[target].len(), 60);
        let r = grad_check_coords(
            |t, v| {
                let vars = (0..4)
                    .map(|i| if i == target { Ok(v) } else { t.constant(args[i].clone()) })
                    .collect::<Result<Vec<_>>>()?;
                let y = t.deform_conv2d(vars[0], vars[1], vars[2], Some(vars[3]), g)?;
                readout(t, y, seed)
            },
            &args[target],
            DEFAULT_EPS,
            &c,
            corrupt,
        )?;
        total = Some(total.map_or(r, |a| worst(a, r)));
    }
    Ok(total.expect("four arguments"))
}

fn attention(kind: AttentionKind, seed: u64, corrupt: bool) -> Result<GradCheck> {
    let (mut params, a) = build(seed, |b| Ok(Attention::build(b, "attn", kind, 8, 7)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    randomise(&mut params, &mut rng, 0.5);
    let x = random_tensor(&mut rng, Shape::new(2, 8, 9, 9), 1.0);
    check_network(&params, &x, |ctx, x| a.apply(ctx, x), 80, seed, corrupt)
}

fn dual(rmpda: bool, seed: u64, corrupt: bool) -> Result<GradCheck> {
    let config = if rmpda { DualAttentionConfig::rmpda(4)? } else { DualAttentionConfig::mpda(4)? };
    let (mut params, block) = build(seed, |b| Ok(DualAttentionBlock::build(b, "block", config)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    randomise(&mut params, &mut rng, 0.4);
    let x = random_tensor(&mut rng, Shape::new(1, 4, 12, 12), 1.0);
    check_network(&params, &x, |ctx, x| block.forward(ctx, x), 40, seed, corrupt)
}

fn aelan(seed: u64, corrupt: bool) -> Result<GradCheck> {
    let config = AelanConfig::new(8, 8, 2, true)?;
    let (mut params, block) = build(seed, |b| Ok(AelanBlock::build(b, "block", config)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    randomise(&mut params, &mut rng, 0.3);
    let x = random_tensor(&mut rng, Shape::new(1, 8, 12, 12), 1.0);
    check_network(&params, &x, |ctx, x| block.forward(ctx, x), 40, seed, corrupt)
}

/// One to three random boxes per image.
pub fn random_targets(rng: &mut ChaCha8Rng, images: usize) -> Vec<Vec<BoundingBox>> {
    (0..images)
        .map(|_| {
            let n = rng.gen_range(1..=3);
            (0..n)
                .map(|_| {
                    let w = rng.gen_range(0.05..0.6);
                    let h = rng.gen_range(0.05..0.6);
                    let cx = rng.gen_range(0.05..0.95);
                    let cy = rng.gen_range(0.05..0.95);
                    BoundingBox { class_id: rng.gen_range(0..2), cx, cy, w, h }
                })
                .collect()
        })
        .collect()
}

fn loss(seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 4);
    let geom = HeadGeometry::new(64, 2);
    let gts = random_targets(&mut rng, 2);
    let targets: Vec<_> = gts.iter().map(|g| assign_targets(g, &geom)).collect();
    let raws: Vec<Tensor<f64>> = (0..3)
        .map(|l| {
            let n = geom.grid(l);
            random_tensor(&mut rng, Shape::new(2, geom.channels(), n, n), 1.5)
        })
        .collect();
    let weights = LossWeights::default();
    let mut total: Option<GradCheck> = None;
    for target in 0..3 {
        let c = coords(&mut rng, raws[target].len(), 200);
        let r = grad_check_coords(
            |t, v| {
                let vars = (0..3)
                    .map(|i| if i == target { Ok(v) } else { t.constant(raws[i].clone()) })
                    .collect::<Result<Vec<_>>>()?;
                Ok(loss_on_tape(t, &vars, &targets, &geom, &weights)?.0)
            },
            &raws[target],
            DEFAULT_EPS,
            &c,
            false,
        )?;
        total = Some(total.map_or(r, |a| worst(a, r)));
    }
    Ok(total.expect("three levels"))
}

fn model(seed: u64, corrupt: bool) -> Result<GradCheck> {
    let mut config = ModelConfig::new(Ablation::from_name("m6")?, 64);
    config.backbone.widths = crate::backbone::Widths { stem: 4, p3: 8, p4: 8, p5: 8 };
    config.backbone.csp_depth = 1;
    let mut model = Detector::<f64>::new(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 5);
    randomise(&mut model.params, &mut rng, 0.3);
    let geom = model.geometry();
    let gts = random_targets(&mut rng, 1);
    let targets: Vec<_> = gts.iter().map(|g| assign_targets(g, &geom)).collect();
    let x = random_tensor(&mut rng, Shape::new(1, 1, 64, 64), 1.0);
    let weights = LossWeights::default();
    let forward = |ctx: &mut Ctx<'_, f64>, x: Var| -> Result<Var> {
        let raw = model.forward(ctx, x)?;
        Ok(loss_on_tape(&mut ctx.tape, &raw, &targets, &geom, &weights)?.0)
    };
    check_network(&model.params, &x, forward, 3, seed, corrupt)
}

fn entry(module: &'static str, check: GradCheck, tolerance: f64) -> SuiteEntry {
    SuiteEntry { module, check, tolerance, passed: check.max_rel_error < tolerance }
}

/// Runs one module's check (or all of them for `"all"`).
pub fn run(module: &str, seed: u64, corrupt: bool) -> Result<Vec<SuiteEntry>> {
    let names: Vec<&'static str> = if module == "all" {
        MODULES.to_vec()
    } else {
        vec![*MODULES.iter().find(|m| **m == module).ok_or_else(|| {
            Error::Config(alloc::format!("unknown module '{module}', expected one of {}, all", MODULES.join(", ")))
        })?]
    };
    names
        .into_iter()
        .map(|m| {
            Ok(match m {
                "dconv" => entry(m, dconv(seed, corrupt)?, BLOCK_TOLERANCE),
                "spatial" => entry(m, attention(AttentionKind::Spatial, seed, corrupt)?, BLOCK_TOLERANCE),
                "channel" => entry(m, attention(AttentionKind::Channel, seed, corrupt)?, BLOCK_TOLERANCE),
                "mpda" => entry(m, dual(false, seed, corrupt)?, DEEP_TOLERANCE),
                "rmpda" => entry(m, dual(true, seed, corrupt)?, DEEP_TOLERANCE),
                "aelan" => entry(m, aelan(seed, corrupt)?, DEEP_TOLERANCE),
                "loss" => entry(m, loss(seed)?, BLOCK_TOLERANCE),
                _ => entry(m, model(seed, corrupt)?, MODEL_TOLERANCE),
            })
        })
        .collect()
}
