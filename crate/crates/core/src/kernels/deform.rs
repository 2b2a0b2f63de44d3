use alloc::vec;
use alloc::vec::Vec;

use super::conv::{add_bias_grad_image, check_bias, project_image, ConvGeom};
use crate::error::{Error, Result};
use crate::real::{gemm, MatRef, Real};
use crate::tensor::{Shape, Tensor};

/// Bilinear sampling cell. The lower corner is `ceil(pos) - 1`, so an exact
/// integer coordinate sits on the upper edge of the cell to its left; the
/// value is still exact there and the derivative is the left-cell one.
#[derive(Clone, Copy)]
struct Cell<T> {
    y0: isize,
    x0: isize,
    ly: T,
    lx: T,
}

impl<T: Real> Cell<T> {
    #[inline]
    fn locate(y: T, x: T) -> Self {
        let cy = y.ceil() - T::one();
        let cx = x.ceil() - T::one();
        Self {
            y0: cy.as_f64() as isize,
            x0: cx.as_f64() as isize,
            ly: y - cy,
            lx: x - cx,
        }
    }

    /// The four corners `[(y0,x0), (y0,x0+1), (y0+1,x0), (y0+1,x0+1)]` with
    /// their flat index (None when outside the plane).
    #[inline]
    fn corners(&self, h: usize, w: usize) -> [Option<usize>; 4] {
        let at = |y: isize, x: isize| {
            if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                Some(y as usize * w + x as usize)
            } else {
                None
            }
        };
        [
            at(self.y0, self.x0),
            at(self.y0, self.x0 + 1),
            at(self.y0 + 1, self.x0),
            at(self.y0 + 1, self.x0 + 1),
        ]
    }

    #[inline]
    fn weights(&self) -> [T; 4] {
        let one = T::one();
        [
            (one - self.ly) * (one - self.lx),
            (one - self.ly) * self.lx,
            self.ly * (one - self.lx),
            self.ly * self.lx,
        ]
    }

    #[inline]
    fn fetch(plane: &[T], idx: &[Option<usize>; 4]) -> [T; 4] {
        idx.map(|i| i.map_or(T::zero(), |i| plane[i]))
    }

    #[inline]
    fn value(&self, plane: &[T], idx: &[Option<usize>; 4]) -> T {
        let v = Self::fetch(plane, idx);
        let wt = self.weights();
        wt[0] * v[0] + wt[1] * v[1] + wt[2] * v[2] + wt[3] * v[3]
    }
}

/// Bilinear interpolation of a single `h x w` plane at fractional `(y, x)`,
/// treating everything outside the plane as zero.
pub fn bilinear_sample<T: Real>(plane: &[T], h: usize, w: usize, y: T, x: T) -> T {
    debug_assert_eq!(plane.len(), h * w);
    let cell = Cell::locate(y, x);
    let idx = cell.corners(h, w);
    cell.value(plane, &idx)
}

fn check_offsets(x: Shape, offsets: Shape, out: Shape, taps: usize) -> Result<()> {
    if offsets.c != 2 * taps {
        return Err(Error::OffsetChannels { expected: 2 * taps, got: offsets.c });
    }
    if offsets.n != x.n || offsets.h != out.h || offsets.w != out.w {
        return Err(Error::ShapeMismatch {
            op: "deform_conv2d",
            detail: alloc::format!("offsets {} vs output {}", offsets, out),
        });
    }
    Ok(())
}

/// Resolved bilinear tap: clamped corner indices, corner masks (1 inside
/// the plane, 0 outside) and the cell fractions.
#[derive(Clone, Copy)]
struct Tap<T> {
    idx: [usize; 4],
    mask: [T; 4],
    wt: [T; 4],
    ly: T,
    lx: T,
}

impl<T: Real> Tap<T> {
    fn new(cell: Cell<T>, h: usize, w: usize) -> Self {
        let corners = cell.corners(h, w);
        let weights = cell.weights();
        let mut tap = Self {
            idx: [0; 4],
            mask: [T::zero(); 4],
            wt: [T::zero(); 4],
            ly: cell.ly,
            lx: cell.lx,
        };
        for i in 0..4 {
            if let Some(j) = corners[i] {
                tap.idx[i] = j;
                tap.mask[i] = T::one();
                tap.wt[i] = weights[i];
            }
        }
        tap
    }

    #[inline]
    fn value(&self, plane: &[T]) -> T {
        self.wt[0] * plane[self.idx[0]]
            + self.wt[1] * plane[self.idx[1]]
            + self.wt[2] * plane[self.idx[2]]
            + self.wt[3] * plane[self.idx[3]]
    }

    #[inline]
    fn fetch(&self, plane: &[T]) -> [T; 4] {
        [
            self.mask[0] * plane[self.idx[0]],
            self.mask[1] * plane[self.idx[1]],
            self.mask[2] * plane[self.idx[2]],
            self.mask[3] * plane[self.idx[3]],
        ]
    }
}

/// Taps of one image, index `k * P + p`.
fn taps_image<T: Real>(off: &[T], s: Shape, g: &ConvGeom, oh: usize, ow: usize, out: &mut Vec<Tap<T>>) {
    let p = oh * ow;
    out.clear();
    for ki in 0..g.kh {
        for kj in 0..g.kw {
            let k = ki * g.kw + kj;
            let dy = &off[2 * k * p..(2 * k + 1) * p];
            let dx = &off[(2 * k + 1) * p..(2 * k + 2) * p];
            for oy in 0..oh {
                let base_y = T::of_f64((oy * g.stride + ki) as f64 - g.pad_h as f64);
                for ox in 0..ow {
                    let base_x = T::of_f64((ox * g.stride + kj) as f64 - g.pad_w as f64);
                    let pi = oy * ow + ox;
                    out.push(Tap::new(Cell::locate(base_y + dy[pi], base_x + dx[pi]), s.h, s.w));
                }
            }
        }
    }
}

fn deform_im2col_image<T: Real>(img: &[T], s: Shape, taps: &[Tap<T>], ntaps: usize, col: &mut [T]) {
    let p = taps.len() / ntaps;
    for c in 0..s.c {
        let plane = &img[c * s.plane()..(c + 1) * s.plane()];
        for k in 0..ntaps {
            let row = c * ntaps + k;
            let dst = &mut col[row * p..(row + 1) * p];
            for (d, t) in dst.iter_mut().zip(&taps[k * p..(k + 1) * p]) {
                *d = t.value(plane);
            }
        }
    }
}

/// Deformable convolution: every tap `k` of output position `p` samples the
/// input at `p * stride - pad + p_k + offset_k(p)` bilinearly.
///
/// `offsets` has shape `(N, 2K, H_out, W_out)` with channels
/// `[dy_0, dx_0, dy_1, dx_1, ...]` in pixel units.
pub fn deform_conv2d_forward<T: Real>(
    x: &Tensor<T>,
    offsets: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Result<Tensor<T>> {
    let out_shape = g.output_shape(x.shape(), w.shape(), "deform_conv2d")?;
    check_offsets(x.shape(), offsets.shape(), out_shape, g.taps())?;
    check_bias(bias, out_shape.c, "deform_conv2d")?;
    let s = x.shape();
    let ntaps = g.taps();
    let p = out_shape.plane();
    let k = s.c * ntaps;
    let img_len = s.c * s.plane();
    let off_len = 2 * ntaps * p;
    let out_len = out_shape.c * p;
    let mut taps = Vec::with_capacity(ntaps * p);
    let mut col = vec![T::zero(); k * p];
    let mut out = Tensor::zeros(out_shape);
    for n in 0..s.n {
        let img = &x.data()[n * img_len..(n + 1) * img_len];
        taps_image(&offsets.data()[n * off_len..(n + 1) * off_len], s, g, out_shape.h, out_shape.w, &mut taps);
        deform_im2col_image(img, s, &taps, ntaps, &mut col);
        project_image(w.data(), &col, bias, k, &mut out.data_mut()[n * out_len..(n + 1) * out_len]);
    }
    Ok(out)
}

/// Accumulates input, offset, weight and bias gradients.
#[allow(clippy::too_many_arguments)]
pub fn deform_conv2d_backward<T: Real>(
    x: &Tensor<T>,
    offsets: &Tensor<T>,
    w: &Tensor<T>,
    g: &ConvGeom,
    dy: &Tensor<T>,
    mut dx: Option<&mut [T]>,
    mut doff: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let s = x.shape();
    let out_shape = dy.shape();
    let ntaps = g.taps();
    let p = out_shape.plane();
    let k = s.c * ntaps;
    let img_len = s.c * s.plane();
    let off_len = 2 * ntaps * p;
    let out_len = out_shape.c * p;
    let need_input = dx.is_some() || doff.is_some();
    let mut taps = Vec::with_capacity(ntaps * p);
    let mut col = if dw.is_some() { vec![T::zero(); k * p] } else { Vec::new() };
    let mut dcol = if need_input { vec![T::zero(); k * p] } else { Vec::new() };
    let one = T::one();
    for n in 0..s.n {
        let dy_n = &dy.data()[n * out_len..(n + 1) * out_len];
        let img = &x.data()[n * img_len..(n + 1) * img_len];
        if let Some(db) = db.as_deref_mut() {
            add_bias_grad_image(dy_n, db);
        }
        if dw.is_none() && !need_input {
            continue;
        }
        taps_image(&offsets.data()[n * off_len..(n + 1) * off_len], s, g, out_shape.h, out_shape.w, &mut taps);
        if let Some(dw) = dw.as_deref_mut() {
            deform_im2col_image(img, s, &taps, ntaps, &mut col);
            gemm(MatRef::new(dy_n, out_shape.c, p), MatRef::new(&col, k, p).t(), T::one(), dw);
        }
        if !need_input {
            continue;
        }
        gemm(
            MatRef::new(w.data(), out_shape.c, k).t(),
            MatRef::new(dy_n, out_shape.c, p),
            T::zero(),
            &mut dcol,
        );
        for c in 0..s.c {
            let plane = &img[c * s.plane()..(c + 1) * s.plane()];
            for kk in 0..ntaps {
                let row = c * ntaps + kk;
                let gcol = &dcol[row * p..(row + 1) * p];
                let tk = &taps[kk * p..(kk + 1) * p];
                if let Some(dx) = dx.as_deref_mut() {
                    let dplane = &mut dx[n * img_len + c * s.plane()..n * img_len + (c + 1) * s.plane()];
                    for (gv, t) in gcol.iter().zip(tk) {
                        for i in 0..4 {
                            dplane[t.idx[i]] = dplane[t.idx[i]] + *gv * t.wt[i];
                        }
                    }
                }
                if let Some(doff) = doff.as_deref_mut() {
                    let base = n * off_len + 2 * kk * p;
                    let (d_y, d_x) = doff[base..base + 2 * p].split_at_mut(p);
                    for (pi, (gv, t)) in gcol.iter().zip(tk).enumerate() {
                        let v = t.fetch(plane);
                        let gy = (one - t.lx) * (v[2] - v[0]) + t.lx * (v[3] - v[1]);
                        let gx = (one - t.ly) * (v[1] - v[0]) + t.ly * (v[3] - v[2]);
                        d_y[pi] = d_y[pi] + *gv * gy;
                        d_x[pi] = d_x[pi] + *gv * gx;
                    }
                }
            }
        }
    }
}
