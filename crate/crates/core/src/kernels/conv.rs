use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::{gemm, MatRef, Real};
use crate::tensor::{Shape, Tensor};

/// Kernel extent, stride and zero padding of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeom {
    pub fn square(k: usize, stride: usize, pad: usize) -> Self {
        Self { kh: k, kw: k, stride, pad_h: pad, pad_w: pad }
    }

    /// Stride-1 geometry that preserves spatial size for odd kernels.
    pub fn same(k: usize) -> Self {
        Self::square(k, 1, k / 2)
    }

    pub fn taps(&self) -> usize {
        self.kh * self.kw
    }

    pub fn output_hw(&self, h: usize, w: usize, op: &'static str) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::Config(alloc::format!("{op}: stride must be >= 1")));
        }
        let ph = h + 2 * self.pad_h;
        let pw = w + 2 * self.pad_w;
        if ph < self.kh || pw < self.kw {
            return Err(Error::EmptyOutput { op });
        }
        let oh = (ph - self.kh) / self.stride + 1;
        let ow = (pw - self.kw) / self.stride + 1;
        if oh == 0 || ow == 0 {
            return Err(Error::EmptyOutput { op });
        }
        Ok((oh, ow))
    }

    /// Output shape for `input` against a weight of shape `(C_out, C_in, kh, kw)`.
    pub fn output_shape(&self, input: Shape, weight: Shape, op: &'static str) -> Result<Shape> {
        if weight.c != input.c {
            return Err(Error::ChannelMismatch { op, expected: weight.c, got: input.c });
        }
        if weight.h != self.kh || weight.w != self.kw {
            return Err(Error::ShapeMismatch {
                op,
                detail: alloc::format!("weight {} vs kernel {}x{}", weight, self.kh, self.kw),
            });
        }
        let (oh, ow) = self.output_hw(input.h, input.w, op)?;
        Ok(Shape::new(input.n, weight.n, oh, ow))
    }
}

impl ConvGeom {
    /// 1x1, stride 1, unpadded: the input plane already is the column matrix.
    pub(crate) fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_h == 0 && self.pad_w == 0
    }
}

/// Column matrix `(C*kh*kw, oh*ow)` of a single image `(C, H, W)`. Every
/// entry of `col` is written.
pub(crate) fn im2col_image<T: Real>(img: &[T], s: Shape, g: &ConvGeom, oh: usize, ow: usize, col: &mut [T]) {
    let p = oh * ow;
    let plane_len = s.plane();
    for c in 0..s.c {
        let plane = &img[c * plane_len..(c + 1) * plane_len];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    let iy = (oy * g.stride + ki) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= s.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                    if g.stride == 1 {
                        // contiguous run of valid columns
                        let lo = g.pad_w.saturating_sub(kj).min(ow);
                        let hi = (s.w + g.pad_w).saturating_sub(kj).min(ow).max(lo);
                        drow[..lo].fill(T::zero());
                        drow[hi..].fill(T::zero());
                        if hi > lo {
                            let start = lo + kj - g.pad_w;
                            drow[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        }
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad_w as isize;
                            *d = if ix >= 0 && ix < s.w as isize { src[ix as usize] } else { T::zero() };
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add_image<T: Real>(col: &[T], dx: &mut [T], s: Shape, g: &ConvGeom, oh: usize, ow: usize) {
    let p = oh * ow;
    for c in 0..s.c {
        let base = c * s.plane();
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let drow = &mut dx[base + iy as usize * s.w..base + (iy as usize + 1) * s.w];
                    let srow = &src[oy * ow..(oy + 1) * ow];
                    for (ox, v) in srow.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad_w as isize;
                        if ix >= 0 && ix < s.w as isize {
                            drow[ix as usize] = drow[ix as usize] + *v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn check_bias<T: Real>(bias: Option<&Tensor<T>>, cout: usize, op: &'static str) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::ShapeMismatch {
                op,
                detail: alloc::format!("bias has {} entries for {} outputs", b.len(), cout),
            });
        }
    }
    Ok(())
}

/// `out_n = W * col + bias` for one image, `out_n` being `(C_out, P)`.
pub(crate) fn project_image<T: Real>(w: &[T], col: &[T], bias: Option<&Tensor<T>>, k: usize, out_n: &mut [T]) {
    let cout = w.len() / k.max(1);
    let p = out_n.len() / cout.max(1);
    let beta = match bias {
        Some(b) => {
            for (row, bv) in out_n.chunks_exact_mut(p).zip(b.data()) {
                row.fill(*bv);
            }
            T::one()
        }
        None => T::zero(),
    };
    gemm(MatRef::new(w, cout, k), MatRef::new(col, k, p), beta, out_n);
}

pub(crate) fn add_bias_grad_image<T: Real>(dy_n: &[T], db: &mut [T]) {
    let p = dy_n.len() / db.len().max(1);
    for (g, row) in db.iter_mut().zip(dy_n.chunks_exact(p)) {
        *g = *g + row.iter().copied().sum::<T>();
    }
}

/// Standard convolution with zero padding.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Result<Tensor<T>> {
    let out_shape = g.output_shape(x.shape(), w.shape(), "conv2d")?;
    check_bias(bias, out_shape.c, "conv2d")?;
    let s = x.shape();
    let k = s.c * g.taps();
    let p = out_shape.plane();
    let img_len = s.c * s.plane();
    let out_len = out_shape.c * p;
    let pointwise = g.is_pointwise();
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
    let mut out = Tensor::zeros(out_shape);
    for n in 0..s.n {
        let img = &x.data()[n * img_len..(n + 1) * img_len];
        let src: &[T] = if pointwise {
            img
        } else {
            im2col_image(img, s, g, out_shape.h, out_shape.w, &mut col);
            &col
        };
        project_image(w.data(), src, bias, k, &mut out.data_mut()[n * out_len..(n + 1) * out_len]);
    }
    Ok(out)
}

/// Accumulates input, weight and bias gradients of [`conv2d_forward`].
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &ConvGeom,
    dy: &Tensor<T>,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let s = x.shape();
    let out_shape = dy.shape();
    let k = s.c * g.taps();
    let p = out_shape.plane();
    let img_len = s.c * s.plane();
    let out_len = out_shape.c * p;
    let pointwise = g.is_pointwise();
    let mut col = if pointwise || dw.is_none() { Vec::new() } else { vec![T::zero(); k * p] };
    let mut dcol = if pointwise || dx.is_none() { Vec::new() } else { vec![T::zero(); k * p] };
    let wt = MatRef::new(w.data(), out_shape.c, k).t();
    for n in 0..s.n {
        let dy_n = &dy.data()[n * out_len..(n + 1) * out_len];
        let img = &x.data()[n * img_len..(n + 1) * img_len];
        if let Some(db) = db.as_deref_mut() {
            add_bias_grad_image(dy_n, db);
        }
        if let Some(dw) = dw.as_deref_mut() {
            let src: &[T] = if pointwise {
                img
            } else {
                im2col_image(img, s, g, out_shape.h, out_shape.w, &mut col);
                &col
            };
            gemm(MatRef::new(dy_n, out_shape.c, p), MatRef::new(src, k, p).t(), T::one(), dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dx_n = &mut dx[n * img_len..(n + 1) * img_len];
            if pointwise {
                gemm(wt, MatRef::new(dy_n, out_shape.c, p), T::one(), dx_n);
            } else {
                gemm(wt, MatRef::new(dy_n, out_shape.c, p), T::zero(), &mut dcol);
                col2im_add_image(&dcol, dx_n, s, g, out_shape.h, out_shape.w);
            }
        }
    }
}
