use birdrone_core::kernels::{default_groups, group_norm_forward};
use birdrone_core::verify::{self, BLOCK_TOLERANCE, DEEP_TOLERANCE, MODEL_TOLERANCE, MODULES};
use birdrone_core::{ConvGeom, Shape, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

/// Central differences on every coordinate, compared with the tape's
/// gradient as `|a - n| / max(1, |a|, |n|)`.
fn fd_error(input: &Tensor<f64>, f: impl Fn(&mut Tape<f64>, Var) -> Var) -> f64 {
    let mut tape = Tape::new();
    let x = tape.variable(input.clone()).unwrap();
    let y = f(&mut tape, x);
    tape.backward(y).unwrap();
    let analytic = tape.grad(x).unwrap().clone();
    let value = |t: Tensor<f64>| {
        let mut tape = Tape::new();
        let x = tape.variable(t).unwrap();
        let y = f(&mut tape, x);
        tape.value(y).item()
    };
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..input.len() {
        let mut p = input.clone();
        p.data_mut()[i] += eps;
        let mut m = input.clone();
        m.data_mut()[i] -= eps;
        let numeric = (value(p) - value(m)) / (2.0 * eps);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs()));
    }
    worst
}

/// `sum(y * r)` for a fixed random `r`.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Var {
    let r = random(&mut ChaCha8Rng::seed_from_u64(seed), tape.shape(y));
    let r = tape.constant(r).unwrap();
    let p = tape.mul(y, r).unwrap();
    tape.sum(p).unwrap()
}

#[test]
fn suite_passes_at_spec_tolerances() {
    let entries = verify::run("all", 0, false).unwrap();
    assert_eq!(entries.len(), MODULES.len());
    for e in &entries {
        let tol = match e.module {
            "model" => MODEL_TOLERANCE,
            "mpda" | "rmpda" | "aelan" => DEEP_TOLERANCE,
            _ => BLOCK_TOLERANCE,
        };
        assert_eq!(e.tolerance, tol, "{}", e.module);
        assert!(e.passed && e.check.max_rel_error < tol, "{}: {:?}", e.module, e.check);
        assert!(e.check.coords_checked > 0);
    }
}

#[test]
fn corrupted_backward_fails_the_suite() {
    let entries = verify::run("dconv", 0, true).unwrap();
    assert!(entries.iter().all(|e| !e.passed));
}

#[test]
fn conv_input_and_weight_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, Shape::new(2, 3, 5, 6));
    let w = random(&mut rng, Shape::new(4, 3, 3, 3));
    let b = random(&mut rng, Shape::new(1, 4, 1, 1));
    for geom in [ConvGeom::same(3), ConvGeom::square(3, 2, 1), ConvGeom::square(3, 1, 0)] {
        let ex = fd_error(&x, |t, v| {
            let w = t.constant(w.clone()).unwrap();
            let b = t.constant(b.clone()).unwrap();
            let y = t.conv2d(v, w, Some(b), geom).unwrap();
            project(t, y, 2)
        });
        let ew = fd_error(&w, |t, v| {
            let x = t.constant(x.clone()).unwrap();
            let y = t.conv2d(x, v, None, geom).unwrap();
            project(t, y, 3)
        });
        assert!(ex < 1e-7 && ew < 1e-7, "{geom:?}: {ex:e} {ew:e}");
    }
}

#[test]
fn deform_offset_gradients_off_lattice() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, Shape::new(1, 2, 5, 5));
    let w = random(&mut rng, Shape::new(2, 2, 3, 3));
    let off = Tensor::from_fn(Shape::new(1, 18, 5, 5), |_, _, _, _| rng.gen_range(-1i32..=1) as f64 + rng.gen_range(0.2..0.8));
    let e = fd_error(&off, |t, v| {
        let x = t.constant(x.clone()).unwrap();
        let w = t.constant(w.clone()).unwrap();
        let y = t.deform_conv2d(x, v, w, None, ConvGeom::same(3)).unwrap();
        project(t, y, 5)
    });
    assert!(e < 1e-6, "{e:e}");
}

#[test]
fn group_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&mut rng, Shape::new(2, 6, 3, 4));
    let gamma = random(&mut rng, Shape::new(1, 6, 1, 1));
    let beta = random(&mut rng, Shape::new(1, 6, 1, 1));
    for groups in [1, 2, 3, 6] {
        let ex = fd_error(&x, |t, v| {
            let g = t.constant(gamma.clone()).unwrap();
            let b = t.constant(beta.clone()).unwrap();
            let y = t.group_norm(v, g, b, groups).unwrap();
            project(t, y, 7)
        });
        let eg = fd_error(&gamma, |t, v| {
            let x = t.constant(x.clone()).unwrap();
            let b = t.constant(beta.clone()).unwrap();
            let y = t.group_norm(x, v, b, groups).unwrap();
            project(t, y, 8)
        });
        assert!(ex < 1e-6 && eg < 1e-7, "groups {groups}: {ex:e} {eg:e}");
    }
}

#[test]
fn group_norm_normalizes_each_group() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&mut rng, Shape::new(2, 8, 4, 4)).map(|v| 3.0 * v + 1.5);
    let ones = Tensor::full(Shape::new(1, 8, 1, 1), 1.0);
    let zeros = Tensor::zeros(Shape::new(1, 8, 1, 1));
    let (y, _) = group_norm_forward(&x, &ones, &zeros, 4).unwrap();
    for n in 0..2 {
        for g in 0..4 {
            let vals: Vec<f64> = (2 * g..2 * g + 2).flat_map(|c| (0..16).map(move |i| (c, i))).map(|(c, i)| y.get(n, c, i / 4, i % 4)).collect();
            let mean = vals.iter().sum::<f64>() / 32.0;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 32.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-4, "{mean} {var}");
        }
    }
    assert_eq!(default_groups(16), 8);
    assert_eq!(default_groups(12), 6);
    assert_eq!(default_groups(5), 5);
}

#[test]
fn elementwise_and_reduction_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random(&mut rng, Shape::new(2, 4, 3, 3));
    let e = fd_error(&x, |t, v| {
        let s = t.silu(v).unwrap();
        let g = t.sigmoid(v).unwrap();
        let m = t.mul(s, g).unwrap();
        let sm = t.softmax(m, 1).unwrap();
        let mx = t.channel_max(v).unwrap();
        let mn = t.channel_mean(v).unwrap();
        let c = t.concat(&[sm, mx, mn]).unwrap();
        let u = t.upsample2x(c).unwrap();
        let p = t.global_avg_pool(u).unwrap();
        project(t, p, 11)
    });
    assert!(e < 1e-7, "{e:e}");
}
