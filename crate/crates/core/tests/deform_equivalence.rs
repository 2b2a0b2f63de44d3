use birdrone_core::ops::{deform_conv2d, DeformKernel, OffsetField};
use birdrone_core::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use support::*;

mod support;

#[test]
fn zero_offsets_match_standard_conv_on_fifty_pairs() {
    let worst = zero_offset_gap(7);
    assert!(worst < 1e-9, "max difference {worst:e}");
}

/// Bilinear read with zero outside the image, written from scratch.
fn sample(x: &Tensor<f64>, n: usize, c: usize, y: f64, xx: f64) -> f64 {
    let s = x.shape();
    let (y0, x0) = (y.floor(), xx.floor());
    let mut v = 0.0;
    for (dy, wy) in [(0.0, 1.0 - (y - y0)), (1.0, y - y0)] {
        for (dx, wx) in [(0.0, 1.0 - (xx - x0)), (1.0, xx - x0)] {
            let (yy, xi) = (y0 + dy, x0 + dx);
            if yy >= 0.0 && xi >= 0.0 && (yy as usize) < s.h && (xi as usize) < s.w {
                v += wy * wx * x.get(n, c, yy as usize, xi as usize);
            }
        }
    }
    v
}

#[test]
fn random_offsets_match_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let (n, cin, cout, h, w) = (2, 2, 3, 7, 6);
        let x = random(&mut rng, Shape::new(n, cin, h, w));
        let weight = random(&mut rng, Shape::new(cout, cin, 3, 3));
        let bias = random(&mut rng, Shape::new(1, cout, 1, 1));
        let off = Tensor::from_fn(Shape::new(n, 18, h, w), |_, _, _, _| rng.gen_range(-2.5..2.5));
        let kernel = DeformKernel::new(weight.clone(), Some(bias.clone())).unwrap();
        let y = deform_conv2d(&x, &kernel, &OffsetField::new(off.clone(), 9).unwrap()).unwrap();
        for b in 0..n {
            for o in 0..cout {
                for i in 0..h {
                    for j in 0..w {
                        let mut acc = bias.data()[o];
                        for t in 0..9 {
                            let py = i as f64 + (t / 3) as f64 - 1.0 + off.get(b, 2 * t, i, j);
                            let px = j as f64 + (t % 3) as f64 - 1.0 + off.get(b, 2 * t + 1, i, j);
                            for c in 0..cin {
                                acc += weight.get(o, c, t / 3, t % 3) * sample(&x, b, c, py, px);
                            }
                        }
                        let got = y.get(b, o, i, j);
                        assert!((got - acc).abs() < 1e-12, "({b},{o},{i},{j}): {got} vs {acc}");
                    }
                }
            }
        }
    }
}

#[test]
fn aelan_with_zero_offsets_equals_gelan() {
    for (depth, seed) in [(1, 3u64), (2, 4), (3, 5)] {
        let d = aelan_gelan_gap(depth, seed);
        assert!(d < 1e-9, "depth {depth}: {d:e}");
    }
}
