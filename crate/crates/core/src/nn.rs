//! Parameters, their binding onto a tape, and the convolution layers the
//! blocks are assembled from.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Index of a tensor in a [`Params`] store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One row of a parameter census.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Shape,
    pub count: usize,
}

/// Named, ordered parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Params<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: String, t: Tensor<T>) -> ParamId {
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn census(&self) -> Vec<ParamInfo> {
        self.iter()
            .map(|(name, t)| ParamInfo { name: name.into(), shape: t.shape(), count: t.len() })
            .collect()
    }

    pub fn total(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// Replaces all values from another store with the same census.
    pub fn load_from(&mut self, other: &Params<T>) -> Result<()> {
        let (mine, theirs) = (self.census(), other.census());
        if mine.len() != theirs.len() {
            return Err(Error::Config(alloc::format!(
                "parameter census mismatch: {} layers expected, {} given",
                mine.len(),
                theirs.len()
            )));
        }
        if let Some((a, b)) = mine.iter().zip(&theirs).find(|(a, b)| a != b) {
            return Err(Error::Config(alloc::format!(
                "parameter census mismatch: expected {} {}, found {} {}",
                a.name,
                a.shape,
                b.name,
                b.shape
            )));
        }
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }
}

/// A tape plus the lazily created leaf for each parameter used so far.
pub struct Ctx<'p, T> {
    pub tape: Tape<T>,
    params: &'p Params<T>,
    bound: Vec<Option<Var>>,
    track: bool,
}

impl<'p, T: Real> Ctx<'p, T> {
    /// `track` decides whether parameters receive gradients.
    pub fn new(params: &'p Params<T>, track: bool) -> Self {
        Self { tape: Tape::new(), params, bound: alloc::vec![None; params.len()], track }
    }

    pub fn with_tape(params: &'p Params<T>, tape: Tape<T>, track: bool) -> Self {
        Self { tape, params, bound: alloc::vec![None; params.len()], track }
    }

    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(v) = self.bound[id.0] {
            return Ok(v);
        }
        let t = self.params.get(id).clone();
        let v = if self.track { self.tape.variable(t)? } else { self.tape.constant(t)? };
        self.bound[id.0] = Some(v);
        Ok(v)
    }

    /// Uses `var` in place of parameter `id` for the rest of this pass.
    pub fn bind(&mut self, id: ParamId, var: Var) {
        self.bound[id.0] = Some(var);
    }

    /// Gradient for every parameter that took part in the pass.
    pub fn param_grads(&self) -> Vec<Option<Tensor<T>>> {
        self.bound.iter().map(|b| b.and_then(|v| self.tape.grad(v).cloned())).collect()
    }
}

/// Deterministic parameter factory.
pub struct Builder<'a, T> {
    params: &'a mut Params<T>,
    rng: ChaCha8Rng,
    prefix: Vec<String>,
}

impl<'a, T: Real> Builder<'a, T> {
    pub fn new(params: &'a mut Params<T>, rng: ChaCha8Rng) -> Self {
        Self { params, rng, prefix: Vec::new() }
    }

    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.into());
        let r = f(self);
        self.prefix.pop();
        r
    }

    fn full_name(&self, leaf: &str) -> String {
        let mut s = String::new();
        for p in &self.prefix {
            s.push_str(p);
            s.push('.');
        }
        s.push_str(leaf);
        s
    }

    /// He-style uniform init, `U(-a, a)` with `a = sqrt(6 / fan_in)`.
    pub fn uniform(&mut self, leaf: &str, shape: Shape, fan_in: usize) -> ParamId {
        let a = libm::sqrt(6.0 / fan_in as f64);
        let data = (0..shape.numel()).map(|_| T::of_f64(self.rng.gen_range(-a..a))).collect();
        let name = self.full_name(leaf);
        self.params.push(name, Tensor::new(shape, data).expect("numel"))
    }

    /// Constant-valued parameter; draws nothing from the RNG.
    pub fn constant(&mut self, leaf: &str, shape: Shape, value: f64) -> ParamId {
        let name = self.full_name(leaf);
        self.params.push(name, Tensor::full(shape, T::of_f64(value)))
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, geom: ConvGeom, act: bool) -> Conv {
        self.scoped(name, |b| {
            let w = b.uniform("weight", Shape::new(cout, cin, geom.kh, geom.kw), cin * geom.taps());
            let bias = b.constant("bias", Shape::new(1, cout, 1, 1), 0.0);
            Conv { weight: w, bias: Some(bias), geom, act, norm: None }
        })
    }

    /// Bias-free conv followed by group normalization and SiLU.
    pub fn norm_conv(&mut self, name: &str, cin: usize, cout: usize, geom: ConvGeom) -> Conv {
        self.scoped(name, |b| {
            let w = b.uniform("weight", Shape::new(cout, cin, geom.kh, geom.kw), cin * geom.taps());
            let norm = b.norm("norm", cout);
            Conv { weight: w, bias: None, geom, act: true, norm: Some(norm) }
        })
    }

    /// Bias-free deformable conv followed by group normalization and SiLU.
    pub fn norm_deform_conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> DeformConv {
        let geom = ConvGeom::same(k);
        self.scoped(name, |b| {
            let w = b.uniform("weight", Shape::new(cout, cin, k, k), cin * k * k);
            let offset = b.zero_conv("offset", cin, 2 * k * k, ConvGeom::same(3));
            let norm = b.norm("norm", cout);
            DeformConv { weight: w, bias: None, geom, act: true, offset, norm: Some(norm) }
        })
    }

    /// Group-norm affine parameters, scale 1 and shift 0.
    pub fn norm(&mut self, name: &str, channels: usize) -> Norm {
        self.scoped(name, |b| Norm {
            gamma: b.constant("weight", Shape::new(1, channels, 1, 1), 1.0),
            beta: b.constant("bias", Shape::new(1, channels, 1, 1), 0.0),
            groups: kernels::default_groups(channels),
        })
    }

    /// Conv with all-zero weight and bias.
    pub fn zero_conv(&mut self, name: &str, cin: usize, cout: usize, geom: ConvGeom) -> Conv {
        self.scoped(name, |b| {
            let w = b.constant("weight", Shape::new(cout, cin, geom.kh, geom.kw), 0.0);
            let bias = b.constant("bias", Shape::new(1, cout, 1, 1), 0.0);
            Conv { weight: w, bias: Some(bias), geom, act: false, norm: None }
        })
    }

    /// Deformable conv with a zero-initialised offset branch.
    pub fn deform_conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, act: bool) -> DeformConv {
        let geom = ConvGeom::same(k);
        self.scoped(name, |b| {
            let w = b.uniform("weight", Shape::new(cout, cin, k, k), cin * k * k);
            let bias = b.constant("bias", Shape::new(1, cout, 1, 1), 0.0);
            let offset = b.zero_conv("offset", cin, 2 * k * k, ConvGeom::same(3));
            DeformConv { weight: w, bias: Some(bias), geom, act, offset, norm: None }
        })
    }
}

/// Bias parameters are stored as `(1, C, 1, 1)`; the kernels want a flat
/// per-channel view, which has the same element order.
fn bias_var<T: Real>(ctx: &mut Ctx<'_, T>, b: Option<ParamId>) -> Result<Option<Var>> {
    b.map(|b| ctx.param(b)).transpose()
}

/// Group normalization with learned per-channel scale and shift.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl Norm {
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let g = ctx.param(self.gamma)?;
        let b = ctx.param(self.beta)?;
        ctx.tape.group_norm(x, g, b, self.groups)
    }
}

/// Optional normalization, then optional SiLU.
fn finish<T: Real>(ctx: &mut Ctx<'_, T>, y: Var, norm: &Option<Norm>, act: bool) -> Result<Var> {
    let y = match norm {
        Some(n) => n.forward(ctx, y)?,
        None => y,
    };
    if act {
        ctx.tape.silu(y)
    } else {
        Ok(y)
    }
}

/// Standard convolution, optionally followed by group norm and SiLU.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub act: bool,
    pub norm: Option<Norm>,
}

impl Conv {
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight)?;
        let b = bias_var(ctx, self.bias)?;
        let y = ctx.tape.conv2d(x, w, b, self.geom)?;
        finish(ctx, y, &self.norm, self.act)
    }
}

/// Deformable convolution whose offsets come from its own 3x3 conv branch.
#[derive(Clone, Debug)]
pub struct DeformConv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub act: bool,
    pub offset: Conv,
    pub norm: Option<Norm>,
}

impl DeformConv {
    /// The learned offset field for `x`, `(N, 2K, H, W)`.
    pub fn offsets<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        self.offset.forward(ctx, x)
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let off = self.offsets(ctx, x)?;
        let w = ctx.param(self.weight)?;
        let b = bias_var(ctx, self.bias)?;
        let y = ctx.tape.deform_conv2d(x, off, w, b, self.geom)?;
        finish(ctx, y, &self.norm, self.act)
    }
}

/// A 3x3 unit that is either standard or deformable.
#[derive(Clone, Debug)]
pub enum ConvUnit {
    Standard(Conv),
    Deformable(DeformConv),
}

impl ConvUnit {
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        match self {
            Self::Standard(c) => c.forward(ctx, x),
            Self::Deformable(c) => c.forward(ctx, x),
        }
    }
}
