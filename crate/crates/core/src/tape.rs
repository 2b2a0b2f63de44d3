//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation appends a node to the [`Tape`]; nodes only ever reference
//! earlier nodes, so the tape is topologically ordered by construction and
//! [`Tape::backward`] is a single reverse sweep.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    DeformConv2d { x: Var, off: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    GroupNorm { x: Var, gamma: Var, beta: Var, cache: kernels::GroupNormCache<T> },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Silu(Var),
    Softmax(Var, usize),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    GlobalAvgPool(Var),
    ChannelMean(Var),
    ChannelMax { x: Var, argmax: Vec<u32> },
    Reshape(Var),
    Upsample2x(Var),
    Sum(Var),
    /// Output whose local Jacobian w.r.t. each input was computed eagerly
    /// (scalar output only).
    Precomputed { inputs: Vec<Var>, grads: Vec<Tensor<T>> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Operation recorder. Not meant to be driven from two threads at once;
/// independent tapes can run in parallel.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    strict: bool,
    corrupt_backward: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Broadcast-compatible output shape (each dim equal or 1 on one side).
fn broadcast_shape(a: Shape, b: Shape, op: &'static str) -> Result<Shape> {
    let mut out = [0; 4];
    for (i, (x, y)) in a.dims().into_iter().zip(b.dims()).enumerate() {
        out[i] = if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            return Err(Error::ShapeMismatch { op, detail: alloc::format!("{} vs {}", a, b) });
        };
    }
    Ok(Shape::from_dims(out))
}

/// Flat index into `s` for a coordinate of the broadcast output.
#[inline]
fn bidx(s: Shape, n: usize, c: usize, y: usize, x: usize) -> usize {
    let n = if s.n == 1 { 0 } else { n };
    let c = if s.c == 1 { 0 } else { c };
    let y = if s.h == 1 { 0 } else { y };
    let x = if s.w == 1 { 0 } else { x };
    s.index(n, c, y, x)
}

fn for_each_index(out: Shape, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let mut i = 0;
    for n in 0..out.n {
        for c in 0..out.c {
            for y in 0..out.h {
                for x in 0..out.w {
                    f(i, n, c, y, x);
                    i += 1;
                }
            }
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), strict: false, corrupt_backward: false }
    }

    /// In strict mode every op errors instead of producing NaN/Inf.
    pub fn with_strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    /// Test hook: makes convolution backward rules deliberately wrong.
    pub fn set_corrupt_backward(&mut self, on: bool) {
        self.corrupt_backward = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Result<Var> {
        if self.strict && !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Gradient-tracked input (parameter or checked input).
    pub fn variable(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, true, "variable")
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, false, "constant")
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let out = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        self.push(out, Op::Conv2d { x, w, b, geom }, rg, "conv2d")
    }

    pub fn deform_conv2d(&mut self, x: Var, off: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let out = kernels::deform_conv2d_forward(
            self.value(x),
            self.value(off),
            self.value(w),
            b.map(|b| self.value(b)),
            &geom,
        )?;
        let mut deps = vec![x, off, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        self.push(out, Op::DeformConv2d { x, off, w, b, geom }, rg, "deform_conv2d")
    }

    /// Group normalization of `x` with per-channel `gamma` and `beta`.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let (out, cache) = kernels::group_norm_forward(self.value(x), self.value(gamma), self.value(beta), groups)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        self.push(out, Op::GroupNorm { x, gamma, beta, cache }, rg, "group_norm")
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = broadcast_shape(sa, sb, name)?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        if sa == sb {
            let data = da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect();
            return Tensor::new(out_shape, data);
        }
        let mut out = Tensor::zeros(out_shape);
        let od = out.data_mut();
        for_each_index(out_shape, |i, n, c, y, x| {
            od[i] = f(da[bidx(sa, n, c, y, x)], db[bidx(sb, n, c, y, x)]);
        });
        Ok(out)
    }

    /// Elementwise sum with broadcasting over singleton axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        self.push(out, Op::Add(a, b), rg, "add")
    }

    /// Elementwise product with broadcasting over singleton axes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        self.push(out, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, x: Var, k: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * k);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Scale(x, k), rg, "scale")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Sigmoid(x), rg, "sigmoid")
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v * sigmoid(v));
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Silu(x), rg, "silu")
    }

    /// Softmax along `axis` (0 = batch, 1 = channels, 2 = rows, 3 = columns).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        if axis > 3 {
            return Err(Error::Config(alloc::format!("softmax axis {axis} out of range")));
        }
        let out = softmax_tensor(self.value(x), axis);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Softmax(x, axis), rg, "softmax")
    }

    /// Concatenation along channels in argument order.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::ShapeMismatch {
            op: "concat_channels",
            detail: "no parts".into(),
        })?;
        let s0 = self.shape(first);
        let mut c_total = 0;
        for &p in parts {
            let s = self.shape(p);
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    detail: alloc::format!("{} vs {}", s, s0),
                });
            }
            c_total += s.c;
        }
        let out_shape = s0.with_channels(c_total);
        let plane = s0.plane();
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..s0.n {
            for &p in parts {
                let t = self.value(p);
                let c = t.shape().c;
                data.extend_from_slice(&t.data()[n * c * plane..(n + 1) * c * plane]);
            }
        }
        let out = Tensor::new(out_shape, data)?;
        let rg = self.any_grad(parts);
        self.push(out, Op::Concat(parts.to_vec()), rg, "concat_channels")
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_channels(start, len)?;
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Slice { x, start }, rg, "slice_channels")
    }

    /// Per-channel spatial mean, `(N, C, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        let inv = T::one() / T::of_f64(s.plane() as f64);
        let data = t.data().chunks(s.plane()).map(|c| c.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::new(Shape::new(s.n, s.c, 1, 1), data)?;
        let rg = self.any_grad(&[x]);
        self.push(out, Op::GlobalAvgPool(x), rg, "global_avg_pool")
    }

    /// Mean over channels, `(N, 1, H, W)`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        let inv = T::one() / T::of_f64(s.c as f64);
        let mut out = Tensor::zeros(s.with_channels(1));
        let p = s.plane();
        for n in 0..s.n {
            let dst = &mut out.data_mut()[n * p..(n + 1) * p];
            for c in 0..s.c {
                let src = &t.data()[(n * s.c + c) * p..(n * s.c + c + 1) * p];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d = *d + *v;
                }
            }
            for d in dst.iter_mut() {
                *d = *d * inv;
            }
        }
        let rg = self.any_grad(&[x]);
        self.push(out, Op::ChannelMean(x), rg, "channel_mean")
    }

    /// Max over channels, `(N, 1, H, W)`; ties resolve to the lowest channel.
    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        let p = s.plane();
        let mut out = Tensor::full(s.with_channels(1), T::neg_infinity());
        let mut argmax = vec![0u32; s.n * p];
        for n in 0..s.n {
            for c in 0..s.c {
                let src = &t.data()[(n * s.c + c) * p..(n * s.c + c + 1) * p];
                let dst = &mut out.data_mut()[n * p..(n + 1) * p];
                for (i, v) in src.iter().enumerate() {
                    if *v > dst[i] || c == 0 {
                        dst[i] = *v;
                        argmax[n * p + i] = c as u32;
                    }
                }
            }
        }
        let rg = self.any_grad(&[x]);
        self.push(out, Op::ChannelMax { x, argmax }, rg, "channel_max")
    }

    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Reshape(x), rg, "reshape")
    }

    /// Nearest-neighbour 2x spatial upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        let out = Tensor::from_fn(Shape::new(s.n, s.c, 2 * s.h, 2 * s.w), |n, c, y, xx| {
            t.get(n, c, y / 2, xx / 2)
        });
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Upsample2x(x), rg, "upsample2x")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Sum(x), rg, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, T::one() / T::of_f64(n as f64))
    }

    /// Records a scalar whose gradient w.r.t. each input is already known.
    pub fn precomputed(&mut self, value: T, inputs: &[Var], grads: Vec<Tensor<T>>) -> Result<Var> {
        if inputs.len() != grads.len() {
            return Err(Error::ShapeMismatch {
                op: "precomputed",
                detail: alloc::format!("{} inputs, {} gradients", inputs.len(), grads.len()),
            });
        }
        for (v, g) in inputs.iter().zip(&grads) {
            if self.shape(*v) != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "precomputed",
                    detail: alloc::format!("gradient {} for input {}", g.shape(), self.shape(*v)),
                });
            }
        }
        let rg = self.any_grad(inputs);
        self.push(
            Tensor::scalar(value),
            Op::Precomputed { inputs: inputs.to_vec(), grads },
            rg,
            "precomputed",
        )
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + *b;
                }
            }
            None => node.grad = Some(g),
        }
    }

    fn grad_buffer(&self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].requires_grad.then(|| Tensor::zeros(self.shape(v)))
    }

    /// Populates `grad` for every gradient-tracked node reachable from `loss`.
    /// Fan-out accumulates additively.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let n = self.value(loss).len();
        if n != 1 {
            return Err(Error::NotScalar(n));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Detached);
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::full(Shape::scalar(), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let updates = self.local_grads(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, gv) in updates {
                self.accumulate(v, gv);
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let g = self.maybe_corrupt(g);
                let (mut gx, mut gw) = (self.grad_buffer(*x), self.grad_buffer(*w));
                let mut gb = b.and_then(|b| self.grad_buffer(b));
                kernels::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    geom,
                    &g,
                    gx.as_mut().map(|t| t.data_mut()),
                    gw.as_mut().map(|t| t.data_mut()),
                    gb.as_mut().map(|t| t.data_mut()),
                );
                push_some(&mut out, *x, gx);
                push_some(&mut out, *w, gw);
                if let Some(b) = b {
                    push_some(&mut out, *b, gb);
                }
            }
            Op::DeformConv2d { x, off, w, b, geom } => {
                let g = self.maybe_corrupt(g);
                let (mut gx, mut go, mut gw) =
                    (self.grad_buffer(*x), self.grad_buffer(*off), self.grad_buffer(*w));
                let mut gb = b.and_then(|b| self.grad_buffer(b));
                kernels::deform_conv2d_backward(
                    self.value(*x),
                    self.value(*off),
                    self.value(*w),
                    geom,
                    &g,
                    gx.as_mut().map(|t| t.data_mut()),
                    go.as_mut().map(|t| t.data_mut()),
                    gw.as_mut().map(|t| t.data_mut()),
                    gb.as_mut().map(|t| t.data_mut()),
                );
                push_some(&mut out, *x, gx);
                push_some(&mut out, *off, go);
                push_some(&mut out, *w, gw);
                if let Some(b) = b {
                    push_some(&mut out, *b, gb);
                }
            }
            Op::GroupNorm { x, gamma, beta, cache } => {
                let g = self.maybe_corrupt(g);
                let (mut gx, mut gg, mut gb) = (self.grad_buffer(*x), self.grad_buffer(*gamma), self.grad_buffer(*beta));
                kernels::group_norm_backward(
                    cache,
                    self.value(*gamma),
                    &g,
                    gx.as_mut().map(|t| t.data_mut()),
                    gg.as_mut().map(|t| t.data_mut()),
                    gb.as_mut().map(|t| t.data_mut()),
                );
                push_some(&mut out, *x, gx);
                push_some(&mut out, *gamma, gg);
                push_some(&mut out, *beta, gb);
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.requires_grad(v) {
                        out.push((v, reduce_to(g, self.shape(v))));
                    }
                }
            }
            Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let os = g.shape();
                let gd = g.data();
                if sa == sb {
                    if self.requires_grad(*a) {
                        let d = gd.iter().zip(db).map(|(&g, &v)| g * v).collect();
                        out.push((*a, Tensor::new(sa, d).expect("same shape")));
                    }
                    if self.requires_grad(*b) {
                        let d = gd.iter().zip(da).map(|(&g, &v)| g * v).collect();
                        out.push((*b, Tensor::new(sb, d).expect("same shape")));
                    }
                    return out;
                }
                if self.requires_grad(*a) {
                    let mut ga = Tensor::zeros(sa);
                    let gad = ga.data_mut();
                    for_each_index(os, |i, n, c, y, x| {
                        let j = bidx(sa, n, c, y, x);
                        gad[j] = gad[j] + gd[i] * db[bidx(sb, n, c, y, x)];
                    });
                    out.push((*a, ga));
                }
                if self.requires_grad(*b) {
                    let mut gb = Tensor::zeros(sb);
                    let gbd = gb.data_mut();
                    for_each_index(os, |i, n, c, y, x| {
                        let j = bidx(sb, n, c, y, x);
                        gbd[j] = gbd[j] + gd[i] * da[bidx(sa, n, c, y, x)];
                    });
                    out.push((*b, gb));
                }
            }
            Op::Scale(x, k) => out.push((*x, g.map(|v| v * *k))),
            Op::Sigmoid(x) => {
                let y = &node.value;
                let data = g.data().iter().zip(y.data()).map(|(&g, &s)| g * s * (T::one() - s)).collect();
                out.push((*x, Tensor::new(g.shape(), data).expect("same shape")));
            }
            Op::Silu(x) => {
                let xv = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&g, &v)| {
                        let s = sigmoid(v);
                        g * s * (T::one() + v * (T::one() - s))
                    })
                    .collect();
                out.push((*x, Tensor::new(g.shape(), data).expect("same shape")));
            }
            Op::Softmax(x, axis) => out.push((*x, softmax_backward(&node.value, g, *axis))),
            Op::Concat(parts) => {
                let s = g.shape();
                let plane = s.plane();
                let mut c0 = 0;
                for p in parts {
                    let ps = self.shape(*p);
                    if self.requires_grad(*p) {
                        let mut data = Vec::with_capacity(ps.numel());
                        for n in 0..s.n {
                            let base = (n * s.c + c0) * plane;
                            data.extend_from_slice(&g.data()[base..base + ps.c * plane]);
                        }
                        out.push((*p, Tensor::new(ps, data).expect("slice shape")));
                    }
                    c0 += ps.c;
                }
            }
            Op::Slice { x, start } => {
                let xs = self.shape(*x);
                let gs = g.shape();
                let plane = xs.plane();
                let mut gx = Tensor::zeros(xs);
                for n in 0..xs.n {
                    let dst = (n * xs.c + start) * plane;
                    gx.data_mut()[dst..dst + gs.c * plane]
                        .copy_from_slice(&g.data()[n * gs.c * plane..(n + 1) * gs.c * plane]);
                }
                out.push((*x, gx));
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.shape(*x);
                let inv = T::one() / T::of_f64(xs.plane() as f64);
                let gx = Tensor::from_fn(xs, |n, c, _, _| g.get(n, c, 0, 0) * inv);
                out.push((*x, gx));
            }
            Op::ChannelMean(x) => {
                let xs = self.shape(*x);
                let inv = T::one() / T::of_f64(xs.c as f64);
                let gx = Tensor::from_fn(xs, |n, _, y, xx| g.get(n, 0, y, xx) * inv);
                out.push((*x, gx));
            }
            Op::ChannelMax { x, argmax } => {
                let xs = self.shape(*x);
                let p = xs.plane();
                let mut gx = Tensor::zeros(xs);
                for n in 0..xs.n {
                    for i in 0..p {
                        let c = argmax[n * p + i] as usize;
                        gx.data_mut()[(n * xs.c + c) * p + i] = g.data()[n * p + i];
                    }
                }
                out.push((*x, gx));
            }
            Op::Reshape(x) => {
                out.push((*x, g.clone().reshape(self.shape(*x)).expect("numel preserved")));
            }
            Op::Upsample2x(x) => {
                let xs = self.shape(*x);
                let mut gx = Tensor::zeros(xs);
                let gs = g.shape();
                for n in 0..gs.n {
                    for c in 0..gs.c {
                        for y in 0..gs.h {
                            for xx in 0..gs.w {
                                let i = xs.index(n, c, y / 2, xx / 2);
                                gx.data_mut()[i] = gx.data_mut()[i] + g.get(n, c, y, xx);
                            }
                        }
                    }
                }
                out.push((*x, gx));
            }
            Op::Sum(x) => out.push((*x, Tensor::full(self.shape(*x), g.item()))),
            Op::Precomputed { inputs, grads } => {
                let up = g.item();
                for (v, local) in inputs.iter().zip(grads) {
                    if self.requires_grad(*v) {
                        out.push((*v, local.map(|d| d * up)));
                    }
                }
            }
        }
        out
    }

    fn maybe_corrupt(&self, g: &Tensor<T>) -> Tensor<T> {
        if self.corrupt_backward {
            g.map(|v| v * T::of_f64(1.5))
        } else {
            g.clone()
        }
    }
}

fn push_some<T>(out: &mut Vec<(Var, Tensor<T>)>, v: Var, g: Option<Tensor<T>>) {
    if let Some(g) = g {
        out.push((v, g));
    }
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to<T: Real>(g: &Tensor<T>, shape: Shape) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape);
    let od = out.data_mut();
    let gd = g.data();
    for_each_index(g.shape(), |i, n, c, y, x| {
        let j = bidx(shape, n, c, y, x);
        od[j] = od[j] + gd[i];
    });
    out
}

fn axis_layout(s: Shape, axis: usize) -> (usize, usize, usize) {
    let d = s.dims();
    let outer: usize = d[..axis].iter().product();
    let inner: usize = d[axis + 1..].iter().product();
    (outer, d[axis], inner)
}

/// Numerically stable softmax along `axis` without recording.
pub fn softmax_tensor<T: Real>(t: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = axis_layout(t.shape(), axis);
    let mut out = t.clone();
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let m = (0..len).map(|k| d[at(k)]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for k in 0..len {
                let e = (d[at(k)] - m).exp();
                d[at(k)] = e;
                z = z + e;
            }
            for k in 0..len {
                d[at(k)] = d[at(k)] / z;
            }
        }
    }
    out
}

fn softmax_backward<T: Real>(y: &Tensor<T>, g: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = axis_layout(y.shape(), axis);
    let mut out = Tensor::zeros(y.shape());
    let (yd, gd) = (y.data(), g.data());
    let od = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let dot: T = (0..len).map(|k| yd[at(k)] * gd[at(k)]).sum();
            for k in 0..len {
                od[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
            }
        }
    }
    out
}

/// `1 / (1 + e^-x)` evaluated without overflow.
pub fn sigmoid_scalar<T: Real>(v: T) -> T {
    sigmoid(v)
}
