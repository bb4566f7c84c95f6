//! Central finite-difference oracle.
//!
//! Only forward evaluations are used here, so this module stays independent
//! of every analytic backward it is asked to check.

use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_RTOL: f64 = 1e-5;
pub const DEFAULT_ATOL: f64 = 1e-8;

/// `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h` for every coordinate.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step h = {h} must be positive")));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::Oracle { index: i });
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_abs_err: f64,
    /// `|a − n| / max(|a|, |n|)`, zero where both are zero.
    pub max_rel_err: f64,
    /// Component with the largest excess over its tolerance.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub passed: bool,
}

/// Component-wise check `|a − n| ≤ atol + rtol·max(|a|, |n|)`.
pub fn compare(analytic: &[f64], numeric: &[f64], rtol: f64, atol: f64) -> Result<GradReport> {
    if analytic.len() != numeric.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: analytic {} vs numeric {}",
            analytic.len(),
            numeric.len()
        )));
    }
    let mut max_abs_err = 0.0f64;
    let mut max_rel_err = 0.0f64;
    let mut worst_index = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut passed = true;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let diff = (a - n).abs();
        let scale = a.abs().max(n.abs());
        let rel = if scale > 0.0 { diff / scale } else { 0.0 };
        max_abs_err = max_abs_err.max(diff);
        max_rel_err = max_rel_err.max(rel);
        let excess = diff - (atol + rtol * scale);
        // NaN differences fail the comparison below.
        if excess.is_nan() || excess > 0.0 {
            passed = false;
        }
        if excess > worst_excess || excess.is_nan() {
            worst_excess = if excess.is_nan() { f64::INFINITY } else { excess };
            worst_index = i;
        }
    }
    Ok(GradReport {
        max_abs_err,
        max_rel_err,
        worst_index,
        analytic: analytic.to_vec(),
        numeric: numeric.to_vec(),
        passed,
    })
}
