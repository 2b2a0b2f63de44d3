//! Tape-free forward operators over plain tensors.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::real::Real;
use crate::tape::{sigmoid_scalar, softmax_tensor, Tape};
use crate::tensor::{Shape, Tensor};

/// Convolution weights `(C_out, C_in, kh, kw)` with an optional bias.
///
/// The regular sampling grid `p_k` is implied by the kernel extent and is
/// centred on the anchor: `{-1, 0, 1}^2` for a 3x3 kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformKernel<T> {
    weight: Tensor<T>,
    bias: Option<Tensor<T>>,
}

impl<T: Real> DeformKernel<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != weight.shape().n {
                return Err(Error::ShapeMismatch {
                    op: "deform_kernel",
                    detail: alloc::format!("bias {} for {} outputs", b.len(), weight.shape().n),
                });
            }
        }
        Ok(Self { weight, bias })
    }

    pub fn weight(&self) -> &Tensor<T> {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor<T>> {
        self.bias.as_ref()
    }

    /// Number of sampling positions `K = kh * kw`.
    pub fn taps(&self) -> usize {
        self.weight.shape().h * self.weight.shape().w
    }

    /// Fixed grid offsets `p_k` as `(dy, dx)` in tap order.
    pub fn base_offsets(&self) -> Vec<(isize, isize)> {
        let (kh, kw) = (self.weight.shape().h as isize, self.weight.shape().w as isize);
        let mut v = Vec::with_capacity(self.taps());
        for i in 0..kh {
            for j in 0..kw {
                v.push((i - kh / 2, j - kw / 2));
            }
        }
        v
    }
}

/// Per-position `(dy, dx)` displacement for each of the `K` taps,
/// `(N, 2K, H_out, W_out)`, channels interleaved `[dy_0, dx_0, dy_1, ...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetField<T>(Tensor<T>);

impl<T: Real> OffsetField<T> {
    pub fn new(t: Tensor<T>, taps: usize) -> Result<Self> {
        if t.shape().c != 2 * taps {
            return Err(Error::OffsetChannels { expected: 2 * taps, got: t.shape().c });
        }
        Ok(Self(t))
    }

    pub fn zeros(n: usize, taps: usize, h: usize, w: usize) -> Self {
        Self(Tensor::zeros(Shape::new(n, 2 * taps, h, w)))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }
}

pub fn conv2d<T: Real>(input: &Tensor<T>, kernel: &DeformKernel<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let s = kernel.weight.shape();
    let geom = ConvGeom { kh: s.h, kw: s.w, stride, pad_h: padding, pad_w: padding };
    kernels::conv2d_forward(input, &kernel.weight, kernel.bias.as_ref(), &geom)
}

/// Stride-1, same-padded deformable convolution.
pub fn deform_conv2d<T: Real>(input: &Tensor<T>, kernel: &DeformKernel<T>, offsets: &OffsetField<T>) -> Result<Tensor<T>> {
    let s = kernel.weight.shape();
    let geom = ConvGeom { kh: s.h, kw: s.w, stride: 1, pad_h: s.h / 2, pad_w: s.w / 2 };
    kernels::deform_conv2d_forward(input, &offsets.0, &kernel.weight, kernel.bias.as_ref(), &geom)
}

pub use kernels::bilinear_sample;

/// Samples channel `c` of image `n` at a fractional position.
pub fn bilinear_at<T: Real>(t: &Tensor<T>, n: usize, c: usize, y: T, x: T) -> T {
    let s = t.shape();
    let off = (n * s.c + c) * s.plane();
    bilinear_sample(&t.data()[off..off + s.plane()], s.h, s.w, y, x)
}

pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone())?;
    let y = tape.global_avg_pool(x)?;
    Ok(tape.value(y).clone())
}

pub fn sigmoid<T: Real>(x: T) -> T {
    sigmoid_scalar(x)
}

pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid_scalar(x)
}

pub fn softmax_over<T: Real>(t: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis > 3 {
        return Err(Error::Config(alloc::format!("softmax axis {axis} out of range")));
    }
    Ok(softmax_tensor(t, axis))
}

pub fn concat_channels<T: Real>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let vars = parts.iter().map(|p| tape.constant(p.clone())).collect::<Result<Vec<_>>>()?;
    let y = tape.concat(&vars)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    /// Direct nested-loop convolution, independent of the im2col path.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (xs, ws) = (x.shape(), w.shape());
        let oh = (xs.h + 2 * pad - ws.h) / stride + 1;
        let ow = (xs.w + 2 * pad - ws.w) / stride + 1;
        Tensor::from_fn(Shape::new(xs.n, ws.n, oh, ow), |n, co, oy, ox| {
            let mut acc = 0.0;
            for ci in 0..xs.c {
                for ki in 0..ws.h {
                    for kj in 0..ws.w {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                            acc += w.get(co, ci, ki, kj) * x.get(n, ci, iy as usize, ix as usize);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn box_sum_center_and_corner() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 3, 3), 1.0);
        let k = DeformKernel::new(Tensor::full(Shape::new(1, 1, 3, 3), 1.0), None).unwrap();
        let y = conv2d(&x, &k, 1, 1).unwrap();
        assert_eq!(y.get(0, 0, 1, 1), 9.0);
        assert_eq!(y.get(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(Shape::new(2, 1, 5, 4), &mut rng);
        let k = DeformKernel::new(Tensor::full(Shape::new(1, 1, 1, 1), 1.0), None).unwrap();
        assert_eq!(conv2d(&x, &k, 1, 0).unwrap(), x);
    }

    #[test]
    fn strided_conv_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(Shape::new(2, 4, 8, 8), &mut rng);
        let w = random(Shape::new(6, 4, 3, 3), &mut rng);
        let k = DeformKernel::new(w.clone(), None).unwrap();
        let y = conv2d(&x, &k, 2, 1).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 6, 4, 4));
        assert!(y.max_abs_diff(&conv_oracle(&x, &w, 2, 1)) < 1e-12);
    }

    #[test]
    fn conv_errors() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 3, 4, 4));
        let k = DeformKernel::new(Tensor::zeros(Shape::new(2, 2, 3, 3)), None).unwrap();
        assert!(matches!(conv2d(&x, &k, 1, 1), Err(Error::ChannelMismatch { .. })));
        let k = DeformKernel::new(Tensor::zeros(Shape::new(2, 3, 7, 7)), None).unwrap();
        assert!(matches!(conv2d(&x, &k, 1, 0), Err(Error::EmptyOutput { .. })));
    }

    #[test]
    fn bilinear_examples() {
        let plane: Vec<f64> = (0..20).map(|v| v as f64).collect(); // 4x5
        assert_eq!(bilinear_sample(&plane, 4, 5, 2.0, 3.0), 13.0);
        let pair = [0.0, 1.0];
        assert_eq!(bilinear_sample(&pair, 1, 2, 0.0, 0.5), 0.5);
        assert_eq!(bilinear_sample(&plane, 4, 5, -5.0, -5.0), 0.0);
    }

    /// Scalar reference: loops over taps and calls `bilinear_sample`.
    fn deform_oracle(x: &Tensor<f64>, w: &Tensor<f64>, off: &Tensor<f64>) -> Tensor<f64> {
        let (xs, ws) = (x.shape(), w.shape());
        Tensor::from_fn(Shape::new(xs.n, ws.n, xs.h, xs.w), |n, co, oy, ox| {
            let mut acc = 0.0;
            for ki in 0..ws.h {
                for kj in 0..ws.w {
                    let k = ki * ws.w + kj;
                    let py = oy as f64 + ki as f64 - (ws.h / 2) as f64 + off.get(n, 2 * k, oy, ox);
                    let px = ox as f64 + kj as f64 - (ws.w / 2) as f64 + off.get(n, 2 * k + 1, oy, ox);
                    for ci in 0..xs.c {
                        acc += w.get(co, ci, ki, kj) * bilinear_at(x, n, ci, py, px);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn deform_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(Shape::new(1, 2, 6, 6), &mut rng);
        let w = random(Shape::new(3, 2, 3, 3), &mut rng);
        let off = random(Shape::new(1, 18, 6, 6), &mut rng);
        let k = DeformKernel::new(w.clone(), None).unwrap();
        let y = deform_conv2d(&x, &k, &OffsetField::new(off.clone(), 9).unwrap()).unwrap();
        assert!(y.max_abs_diff(&deform_oracle(&x, &w, &off)) < 1e-12);
    }

    #[test]
    fn deform_zero_offsets_equal_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(Shape::new(2, 3, 7, 5), &mut rng);
        let k = DeformKernel::new(random(Shape::new(4, 3, 3, 3), &mut rng), Some(random(Shape::new(1, 4, 1, 1), &mut rng))).unwrap();
        let a = deform_conv2d(&x, &k, &OffsetField::zeros(2, 9, 7, 5)).unwrap();
        let b = conv2d(&x, &k, 1, 1).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn deform_unit_shift_on_constant_interior() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 9, 9), 2.5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = DeformKernel::new(random(Shape::new(2, 1, 3, 3), &mut rng), None).unwrap();
        let mut off = Tensor::zeros(Shape::new(1, 18, 9, 9));
        for t in 0..9 {
            for y in 0..9 {
                for xx in 0..9 {
                    off.set(0, 2 * t + 1, y, xx, 1.0);
                }
            }
        }
        let shifted = deform_conv2d(&x, &k, &OffsetField::new(off, 9).unwrap()).unwrap();
        let plain = deform_conv2d(&x, &k, &OffsetField::zeros(1, 9, 9, 9)).unwrap();
        // interior: every tap lands inside the image in both cases
        for c in 0..2 {
            for y in 1..8 {
                for xx in 1..7 {
                    assert!((shifted.get(0, c, y, xx) - plain.get(0, c, y, xx)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn offset_channel_count_checked() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 1, 4, 4));
        assert!(matches!(OffsetField::new(Tensor::<f64>::zeros(Shape::new(1, 16, 4, 4)), 9), Err(Error::OffsetChannels { .. })));
        let k = DeformKernel::new(Tensor::zeros(Shape::new(1, 1, 3, 3)), None).unwrap();
        let bad = OffsetField::new(Tensor::zeros(Shape::new(1, 18, 3, 4)), 9).unwrap();
        assert!(deform_conv2d(&x, &k, &bad).is_err());
    }

    #[test]
    fn base_offsets_are_centered_grid() {
        let k = DeformKernel::new(Tensor::<f64>::zeros(Shape::new(1, 1, 3, 3)), None).unwrap();
        assert_eq!(k.taps(), 9);
        let g = k.base_offsets();
        assert_eq!(g[0], (-1, -1));
        assert_eq!(g[4], (0, 0));
        assert_eq!(g[8], (1, 1));
    }

    #[test]
    fn pooling_and_activations() {
        let t = Tensor::<f64>::full(Shape::new(2, 3, 4, 4), 3.5);
        assert!(global_avg_pool(&t).unwrap().data().iter().all(|&v| v == 3.5));
        let t = Tensor::new(Shape::new(1, 1, 2, 2), alloc::vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&t).unwrap().item(), 2.5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = random(Shape::new(2, 3, 5, 4), &mut rng);
        let p = global_avg_pool(&r).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                let mut s = 0.0;
                for y in 0..5 {
                    for x in 0..4 {
                        s += r.get(n, c, y, x);
                    }
                }
                assert!((p.get(n, c, 0, 0) - s / 20.0).abs() < 1e-12);
            }
        }
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((silu(1.0f64) - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        let u = Tensor::<f64>::full(Shape::new(1, 4, 1, 1), 0.7);
        assert!(softmax_over(&u, 1).unwrap().data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn concat_layout_and_slice_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(Shape::new(1, 2, 4, 4), &mut rng);
        let b = random(Shape::new(1, 2, 4, 4), &mut rng);
        let c = concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.shape(), Shape::new(1, 4, 4, 4));
        assert_eq!(c.slice_channels(0, 2).unwrap(), a);
        assert_eq!(c.slice_channels(2, 2).unwrap(), b);
        let parts: Vec<_> = (1..=4).map(|c| random(Shape::new(2, c, 3, 3), &mut rng)).collect();
        let cat = concat_channels(&parts).unwrap();
        assert_eq!(cat.shape().c, 1 + 2 + 3 + 4);
        let bad = random(Shape::new(1, 1, 3, 4), &mut rng);
        assert!(concat_channels(&[a, bad]).is_err());
    }
}
