//! Central-difference gradient verification (64-bit only).

use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Outcome of a gradient check.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Checks every coordinate of `input`. `f` must build a scalar from the
/// variable it is handed; it is re-run twice per coordinate.
pub fn grad_check<F>(f: F, input: &Tensor<f64>, eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..input.len()).collect();
    grad_check_coords(f, input, eps, &coords, false)
}

/// Like [`grad_check`] but on at most `max_coords` randomly chosen
/// coordinates (all of them if the tensor is small enough).
pub fn grad_check_sampled<F>(f: F, input: &Tensor<f64>, eps: f64, max_coords: usize, seed: u64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = if input.len() <= max_coords {
        (0..input.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = sample(&mut rng, input.len(), max_coords).into_vec();
        v.sort_unstable();
        v
    };
    grad_check_coords(f, input, eps, &coords, false)
}

/// Core routine; `corrupt` turns on the tape's faulty-backward hook.
pub fn grad_check_coords<F>(f: F, input: &Tensor<f64>, eps: f64, coords: &[usize], corrupt: bool) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new().with_strict(true);
    tape.set_corrupt_backward(corrupt);
    let x = tape.variable(input.clone())?;
    let y = f(&mut tape, x)?;
    tape.backward(y)?;
    let analytic = tape.grad(x).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));

    let eval = |t: Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new().with_strict(true);
        let x = tape.variable(t)?;
        let y = f(&mut tape, x)?;
        Ok(tape.value(y).item())
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: coords.len(),
    };
    for &i in coords {
        let mut plus = input.clone();
        plus.data_mut()[i] += eps;
        let mut minus = input.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if rel > report.max_rel_error || !rel.is_finite() {
            report = GradCheck { max_rel_error: rel, worst_index: i, analytic: a, numeric, ..report };
        }
    }
    Ok(report)
}
