use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Largest group count up to 8 that divides `channels`.
pub fn default_groups(channels: usize) -> usize {
    (1..=8.min(channels.max(1))).rev().find(|g| channels % g == 0).unwrap_or(1)
}

/// Saved forward state: the normalized input and `1 / std` per (image, group).
#[derive(Clone, Debug)]
pub struct GroupNormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub groups: usize,
}

/// Group normalization with per-channel affine `gamma`, `beta` (`C` entries
/// each). Statistics are taken per image over each group's channels and
/// positions.
pub fn group_norm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    groups: usize,
) -> Result<(Tensor<T>, GroupNormCache<T>)> {
    let s = x.shape();
    if groups == 0 || s.c % groups != 0 {
        return Err(Error::Config(alloc::format!("{} channels cannot form {groups} groups", s.c)));
    }
    if gamma.len() != s.c || beta.len() != s.c {
        return Err(Error::ShapeMismatch {
            op: "group_norm",
            detail: alloc::format!("affine has {}/{} entries for {} channels", gamma.len(), beta.len(), s.c),
        });
    }
    let cg = s.c / groups;
    let plane = s.plane();
    let m = cg * plane;
    let mut xhat = Tensor::zeros(s);
    let mut y = Tensor::zeros(s);
    let mut inv_std = Vec::with_capacity(s.n * groups);
    for n in 0..s.n {
        for g in 0..groups {
            let lo = (n * s.c + g * cg) * plane;
            let src = &x.data()[lo..lo + m];
            let mean = src.iter().map(|v| v.as_f64()).sum::<f64>() / m as f64;
            let var = src.iter().map(|v| (v.as_f64() - mean) * (v.as_f64() - mean)).sum::<f64>() / m as f64;
            let inv = T::of_f64(1.0 / libm::sqrt(var + GROUP_NORM_EPS));
            let mean = T::of_f64(mean);
            inv_std.push(inv);
            let xh = &mut xhat.data_mut()[lo..lo + m];
            for (d, v) in xh.iter_mut().zip(src) {
                *d = (*v - mean) * inv;
            }
            let yd = &mut y.data_mut()[lo..lo + m];
            for (ci, (yc, xc)) in yd.chunks_exact_mut(plane).zip(xhat.data()[lo..lo + m].chunks_exact(plane)).enumerate() {
                let c = g * cg + ci;
                let (ga, be) = (gamma.data()[c], beta.data()[c]);
                for (o, v) in yc.iter_mut().zip(xc) {
                    *o = *v * ga + be;
                }
            }
        }
    }
    Ok((y, GroupNormCache { xhat, inv_std, groups }))
}

/// Accumulates input, scale and shift gradients of [`group_norm_forward`].
pub fn group_norm_backward<T: Real>(
    cache: &GroupNormCache<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
    dx: Option<&mut [T]>,
    dgamma: Option<&mut [T]>,
    dbeta: Option<&mut [T]>,
) {
    let s = dy.shape();
    let groups = cache.groups;
    let cg = s.c / groups;
    let plane = s.plane();
    let m = cg * plane;
    let xh = cache.xhat.data();
    let gd = dy.data();
    if let Some(db) = dbeta {
        for n in 0..s.n {
            for (c, acc) in db.iter_mut().enumerate() {
                let lo = (n * s.c + c) * plane;
                *acc = *acc + gd[lo..lo + plane].iter().copied().sum::<T>();
            }
        }
    }
    if let Some(dgm) = dgamma {
        for n in 0..s.n {
            for (c, acc) in dgm.iter_mut().enumerate() {
                let lo = (n * s.c + c) * plane;
                *acc = *acc + gd[lo..lo + plane].iter().zip(&xh[lo..lo + plane]).map(|(g, x)| *g * *x).sum::<T>();
            }
        }
    }
    let Some(dx) = dx else { return };
    let mf = T::of_f64(m as f64);
    let mut dxhat = Vec::with_capacity(m);
    for n in 0..s.n {
        for g in 0..groups {
            let lo = (n * s.c + g * cg) * plane;
            dxhat.clear();
            for ci in 0..cg {
                let ga = gamma.data()[g * cg + ci];
                let a = lo + ci * plane;
                dxhat.extend(gd[a..a + plane].iter().map(|v| *v * ga));
            }
            let xg = &xh[lo..lo + m];
            let sum: T = dxhat.iter().copied().sum();
            let dot: T = dxhat.iter().zip(xg).map(|(d, x)| *d * *x).sum();
            let k = cache.inv_std[n * groups + g] / mf;
            for ((o, d), x) in dx[lo..lo + m].iter_mut().zip(&dxhat).zip(xg) {
                *o = *o + k * (mf * *d - sum - *x * dot);
            }
        }
    }
}
