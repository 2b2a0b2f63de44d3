//! Dense NCHW tensors.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::real::Real;

/// Four-dimensional extent `(batch, channels, height, width)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Self::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn from_dims(d: [usize; 4]) -> Self {
        Self::new(d[0], d[1], d[2], d[3])
    }

    pub fn with_channels(&self, c: usize) -> Self {
        Self { c, ..*self }
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Contiguous row-major NCHW tensor. `data.len() == shape.numel()` always.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                detail: alloc::format!("{} elements for shape {}", data.len(), shape),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self { shape, data: vec![value; shape.numel()] }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.shape.index(n, c, y, x);
        self.data[i] = v;
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {}", self.shape);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| U::of_f64(v.as_f64())).collect() }
    }

    /// Same data under a different shape with equal element count.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: alloc::format!("{} -> {}", self.shape, shape),
            });
        }
        Ok(Self { shape, data: self.data })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    /// Channels `[start, start + len)` as a new tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let s = self.shape;
        if start + len > s.c || len == 0 {
            return Err(Error::ShapeMismatch {
                op: "slice_channels",
                detail: alloc::format!("[{start}, {}) of {} channels", start + len, s.c),
            });
        }
        let plane = s.plane();
        let mut data = Vec::with_capacity(s.n * len * plane);
        for n in 0..s.n {
            let base = (n * s.c + start) * plane;
            data.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Ok(Self { shape: s.with_channels(len), data })
    }

    /// Batch entries `[start, start + len)`.
    pub fn slice_batch(&self, start: usize, len: usize) -> Result<Self> {
        let s = self.shape;
        if start + len > s.n || len == 0 {
            return Err(Error::ShapeMismatch {
                op: "slice_batch",
                detail: alloc::format!("[{start}, {}) of {} entries", start + len, s.n),
            });
        }
        let per = s.c * s.plane();
        let data = self.data[start * per..(start + len) * per].to_vec();
        Ok(Self { shape: Shape { n: len, ..s }, data })
    }

    /// Stacks tensors along the batch axis.
    pub fn stack_batch(parts: &[Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::ShapeMismatch {
            op: "stack_batch",
            detail: "no parts".into(),
        })?;
        let s = first.shape;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut n = 0;
        for p in parts {
            let ps = p.shape;
            if (ps.c, ps.h, ps.w) != (s.c, s.h, s.w) {
                return Err(Error::ShapeMismatch {
                    op: "stack_batch",
                    detail: alloc::format!("{} vs {}", ps, s),
                });
            }
            n += ps.n;
            data.extend_from_slice(&p.data);
        }
        Ok(Self { shape: Shape { n, ..s }, data })
    }
}
