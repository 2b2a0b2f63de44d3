//! Scalar abstraction shared by the 32-bit training path and the 64-bit
//! verification path.

use core::fmt::Debug;
use core::iter::Sum;

use num_traits::Float;

/// Floating point element type of a [`crate::Tensor`].
pub trait Real:
    Float + Sum + Debug + Default + Send + Sync + 'static
{
    /// Short name used in diagnostics.
    const NAME: &'static str;

    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `C = alpha * A * B + beta * C` over strided row/column views.
    ///
    /// # Safety
    ///
    /// Every index reachable through the given dims and strides must lie
    /// inside the corresponding allocation, and `c` must not alias `a`/`b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major view.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn max_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// `out = a * b + beta * out` where `out` is row-major `a.rows x b.cols`.
pub(crate) fn gemm<T: Real>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, out: &mut [T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(out.len() >= m * n, "gemm output too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut out[..m * n] {
            *v = *v * beta;
        }
        return;
    }
    assert!(a.max_index() < a.data.len() && b.max_index() < b.data.len());
    // SAFETY: bounds checked above; `out` is a distinct mutable borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: alloc::vec::Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect();
        let b: alloc::vec::Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect();
        // a: 2x3, b: 3x4
        let mut out = vec![1.0; 8];
        gemm(MatRef::new(&a, 2, 3), MatRef::new(&b, 3, 4), 1.0, &mut out);
        for i in 0..2 {
            for j in 0..4 {
                let mut s = 1.0;
                for p in 0..3 {
                    s += a[i * 3 + p] * b[p * 4 + j];
                }
                assert!((out[i * 4 + j] - s).abs() < 1e-12);
            }
        }
        // (b^T a^T) = (a b)^T
        let mut out_t = vec![0.0; 8];
        gemm(MatRef::new(&b, 3, 4).t(), MatRef::new(&a, 2, 3).t(), 0.0, &mut out_t);
        for i in 0..2 {
            for j in 0..4 {
                assert!((out_t[j * 2 + i] - (out[i * 4 + j] - 1.0)).abs() < 1e-12);
            }
        }
    }
}
