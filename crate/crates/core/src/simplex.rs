//! Probability-simplex primitives.
//!
//! Everything downstream (losses, curves, metrics) consumes predicted
//! likelihoods through the types here. Probabilities are clamped to
//! [`PROB_FLOOR`] before any logarithm and uncertainties are floored at
//! [`PHI_FLOOR`], so `1/φ` and `(2πφ)^(-τ/2)` stay finite at the simplex
//! boundary.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp floor applied to every probability entry.
pub const PROB_FLOOR: f64 = 1e-12;

/// Floor applied to every uncertainty value.
pub const PHI_FLOOR: f64 = 1e-6;

/// Tolerance on `sum(p) == 1` accepted by [`ProbVector::new`].
pub const SUM_TOL: f64 = 1e-9;

/// Unnormalized class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "logit vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "logit {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(LogitVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A point on the probability simplex with every entry at least [`PROB_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates an existing probability vector without modifying it.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "probability vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(PROB_FLOOR..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "probability {i} = {v} outside [{PROB_FLOOR}, 1]"
                )));
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(ProbVector(values))
    }

    /// Clamps non-negative weights to [`PROB_FLOOR`] and renormalizes.
    pub fn clamped(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "probability vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "weight {i} = {} is negative or not finite",
                values[i]
            )));
        }
        Ok(ProbVector(clamp_renormalize(values)))
    }

    pub fn uniform(c: usize) -> Result<Self> {
        Self::clamped(vec![1.0; c])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Largest probability and its index; ties go to the lowest index.
    pub fn max(&self) -> (usize, f64) {
        argmax(&self.0)
    }
}

fn clamp_renormalize(mut values: Vec<f64>) -> Vec<f64> {
    for v in values.iter_mut() {
        *v = v.max(PROB_FLOOR);
    }
    let sum: f64 = values.iter().sum();
    let mut excess = 0.0;
    for v in values.iter_mut() {
        *v /= sum;
        if *v < PROB_FLOOR {
            excess += PROB_FLOOR - *v;
            *v = PROB_FLOOR;
        }
    }
    // Division can push a floored entry just below the floor; the largest
    // entry absorbs the difference.
    if excess > 0.0 {
        let (i, _) = argmax(&values);
        values[i] -= excess;
    }
    values
}

/// Index and value of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    (best, values[best])
}

/// Selected top-τ entries of a probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKStats {
    /// Class ids in descending probability order.
    pub indices: Vec<usize>,
    /// Probabilities at `indices`.
    pub selected: Vec<f64>,
    /// Squared L2 norm of `selected`.
    pub t_value: f64,
}

/// Uncertainty of a probability vector, in `[PHI_FLOOR, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Uncertainty(f64);

impl Uncertainty {
    fn floored(raw: f64) -> Self {
        Uncertainty(raw.clamp(PHI_FLOOR, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// True when the floor is active, i.e. the value no longer depends on `p`.
    pub fn is_floored(self) -> bool {
        self.0 <= PHI_FLOOR
    }
}

/// Which uncertainty measure drives the exponential regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhiKind {
    #[default]
    Entropy,
    Variance,
}

impl PhiKind {
    pub fn name(self) -> &'static str {
        match self {
            PhiKind::Entropy => "entropy",
            PhiKind::Variance => "variance",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(PhiKind::Entropy),
            "variance" => Ok(PhiKind::Variance),
            other => Err(Error::InvalidArgument(format!(
                "unknown uncertainty kind `{other}` (expected entropy|variance)"
            ))),
        }
    }

    pub fn eval(self, p: &ProbVector) -> Uncertainty {
        match self {
            PhiKind::Entropy => normalized_entropy(p),
            PhiKind::Variance => variance_uncertainty(p),
        }
    }

    /// Gradient of the uncertainty with respect to every entry of `p`.
    /// Zero when the floor is active.
    pub fn grad(self, p: &ProbVector, phi: Uncertainty) -> Vec<f64> {
        if phi.is_floored() {
            return vec![0.0; p.len()];
        }
        match self {
            PhiKind::Entropy => normalized_entropy_grad(p),
            PhiKind::Variance => variance_uncertainty_grad(p),
        }
    }
}

/// Max-subtracted softmax, clamped to [`PROB_FLOOR`] and renormalized.
pub fn softmax(logits: &LogitVector) -> ProbVector {
    ProbVector(softmax_slice(logits.as_slice()))
}

pub(crate) fn softmax_slice(z: &[f64]) -> Vec<f64> {
    let (_, m) = argmax(z);
    let exps: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    clamp_renormalize(exps.into_iter().map(|e| e / sum).collect())
}

/// Applies the transposed softmax Jacobian to a probability-space gradient:
/// `p ⊙ (g − ⟨p, g⟩)`.
pub fn softmax_vjp(p: &ProbVector, grad_p: &[f64]) -> Vec<f64> {
    let p = p.as_slice();
    let dot: f64 = p.iter().zip(grad_p).map(|(a, b)| a * b).sum();
    p.iter().zip(grad_p).map(|(pi, gi)| pi * (gi - dot)).collect()
}

/// Shannon entropy in nats.
pub fn shannon_entropy(p: &ProbVector) -> f64 {
    -p.as_slice().iter().map(|&v| v * v.ln()).sum::<f64>()
}

/// `φ = −Σ p log p / log c`, floored at [`PHI_FLOOR`].
pub fn normalized_entropy(p: &ProbVector) -> Uncertainty {
    let c = p.len() as f64;
    Uncertainty::floored(shannon_entropy(p) / c.ln())
}

fn normalized_entropy_grad(p: &ProbVector) -> Vec<f64> {
    let log_c = (p.len() as f64).ln();
    p.as_slice().iter().map(|&v| -(v.ln() + 1.0) / log_c).collect()
}

/// `1 − Var(p) / Var_max(c)` with the population variance of the entries and
/// `Var_max(c) = (c − 1)/c²` (the one-hot variance), floored at [`PHI_FLOOR`].
pub fn variance_uncertainty(p: &ProbVector) -> Uncertainty {
    let c = p.len() as f64;
    let values = p.as_slice();
    let mean = values.iter().sum::<f64>() / c;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c;
    let var_max = (c - 1.0) / (c * c);
    Uncertainty::floored(1.0 - var / var_max)
}

fn variance_uncertainty_grad(p: &ProbVector) -> Vec<f64> {
    let c = p.len() as f64;
    let values = p.as_slice();
    let mean = values.iter().sum::<f64>() / c;
    let var_max = (c - 1.0) / (c * c);
    // d Var / d p_k = 2 (p_k − mean) / c; the mean term cancels in the sum.
    values
        .iter()
        .map(|v| -2.0 * (v - mean) / (c * var_max))
        .collect()
}

/// The τ largest probabilities, descending, ties broken by ascending index.
pub fn topk_stats(p: &ProbVector, tau: usize) -> Result<TopKStats> {
    let c = p.len();
    if tau == 0 || tau > c {
        return Err(Error::InvalidArgument(format!(
            "tau = {tau} outside [1, {c}]"
        )));
    }
    let values = p.as_slice();
    let order = |a: &usize, b: &usize| -> Ordering {
        values[*b]
            .total_cmp(&values[*a])
            .then_with(|| a.cmp(b))
    };
    let mut idx: Vec<usize> = (0..c).collect();
    if tau < c {
        idx.select_nth_unstable_by(tau - 1, order);
        idx.truncate(tau);
    }
    idx.sort_unstable_by(order);
    let selected: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
    let t_value = selected.iter().map(|v| v * v).sum();
    Ok(TopKStats {
        indices: idx,
        selected,
        t_value,
    })
}

/// Binary entropy `−p ln p − (1 − p) ln(1 − p)` in nats.
pub fn binary_entropy(p: f64) -> f64 {
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}
