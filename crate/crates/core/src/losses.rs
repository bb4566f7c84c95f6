//! Loss functions with analytic gradients.
//!
//! Public entry points that train a network take logits and return the
//! gradient with respect to the logits. The regularizers themselves live in
//! probability space and are composed through [`softmax_vjp`].
//!
//! The adaptive discriminative regularizer (ADR) for one sample is
//!
//! ```text
//! F(p) = (2π φ(p))^(−τ/2) · exp(−T(p) / (2 φ(p)))
//! ```
//!
//! where `φ` is an uncertainty in `(0, 1]` and `T` is the squared norm of the
//! τ largest probabilities. Two backward passes are provided:
//! [`adr_backward_exact`] differentiates the implemented forward (and is what
//! training uses), while [`adr_backward_paper`] evaluates the published
//! closed form over the selected entries only, for side-by-side reports.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::{
    shannon_entropy, softmax, softmax_vjp, topk_stats, LogitVector, PhiKind, ProbVector,
    TopKStats, Uncertainty,
};

/// ADR weight and similar-class count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdrHyper {
    pub gamma: f64,
    pub tau: usize,
}

impl AdrHyper {
    pub const DEFAULT_GAMMA: f64 = 0.05;

    pub fn new(gamma: f64, tau: usize) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be finite and non-negative, got {gamma}"
            )));
        }
        if tau == 0 {
            return Err(Error::InvalidArgument("tau must be at least 1".into()));
        }
        Ok(AdrHyper { gamma, tau })
    }

    /// `max(2, round(0.3 c))`, capped at `c`.
    pub fn default_tau(c: usize) -> usize {
        let tau = ((0.3 * c as f64).round() as usize).max(2);
        tau.min(c)
    }

    pub fn default_for(c: usize) -> Self {
        AdrHyper {
            gamma: Self::DEFAULT_GAMMA,
            tau: Self::default_tau(c),
        }
    }

    fn check_classes(&self, c: usize) -> Result<()> {
        if self.tau > c {
            return Err(Error::InvalidArgument(format!(
                "tau = {} exceeds class count {c}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Strength of the plain entropy regularizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyHyper {
    pub lambda: f64,
}

impl EntropyHyper {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        Ok(EntropyHyper { lambda })
    }
}

/// Unweighted loss components, kept for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub ce_part: f64,
    pub adr_part: f64,
    pub entropy_part: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// Gradient with respect to the loss input (logits or probabilities,
    /// depending on the function).
    pub grad: Vec<f64>,
    pub parts: LossParts,
}

fn check_label(label: usize, c: usize) -> Result<()> {
    if label >= c {
        return Err(Error::InvalidArgument(format!(
            "label {label} outside [0, {c})"
        )));
    }
    Ok(())
}

/// Cross-entropy of logits against a hard label, fused with softmax.
pub fn ce_forward_backward(logits: &LogitVector, label: usize) -> Result<LossOutput> {
    check_label(label, logits.len())?;
    let p = softmax(logits);
    let value = -p.as_slice()[label].ln();
    let mut grad = p.into_inner();
    grad[label] -= 1.0;
    Ok(LossOutput {
        value,
        grad,
        parts: LossParts {
            ce_part: value,
            ..LossParts::default()
        },
    })
}

/// Binary cross-entropy derivative `−1/p_t`.
pub fn ce_binary_derivative(p_t: f64) -> Result<f64> {
    if !(p_t > 0.0 && p_t <= 1.0) {
        return Err(Error::Domain(format!("p_t = {p_t} outside (0, 1]")));
    }
    Ok(-1.0 / p_t)
}

/// `(1 − ε)·onehot + ε·uniform`.
pub fn label_smooth_targets(label: usize, eps_ls: f64, c: usize) -> Result<ProbVector> {
    if !(0.0..1.0).contains(&eps_ls) {
        return Err(Error::InvalidArgument(format!(
            "label smoothing epsilon {eps_ls} outside [0, 1)"
        )));
    }
    check_label(label, c)?;
    let off = eps_ls / c as f64;
    let mut target = vec![off; c];
    target[label] += 1.0 - eps_ls;
    ProbVector::clamped(target)
}

/// Cross-entropy of logits against a soft target distribution.
pub fn soft_ce_forward_backward(logits: &LogitVector, target: &ProbVector) -> Result<LossOutput> {
    if target.len() != logits.len() {
        return Err(Error::ShapeMismatch(format!(
            "target has {} classes, logits {}",
            target.len(),
            logits.len()
        )));
    }
    let p = softmax(logits);
    let value = -p
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(pi, qi)| qi * pi.ln())
        .sum::<f64>();
    let grad = p
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(pi, qi)| pi - qi)
        .collect();
    Ok(LossOutput {
        value,
        grad,
        parts: LossParts {
            ce_part: value,
            ..LossParts::default()
        },
    })
}

/// `λ·H(p)` with un-normalized Shannon entropy; gradient in probability space.
pub fn entropy_reg_forward_backward(p: &ProbVector, hyper: EntropyHyper) -> LossOutput {
    let h = shannon_entropy(p);
    let grad = p
        .as_slice()
        .iter()
        .map(|&v| hyper.lambda * (-v.ln() - 1.0))
        .collect();
    LossOutput {
        value: hyper.lambda * h,
        grad,
        parts: LossParts {
            entropy_part: h,
            ..LossParts::default()
        },
    }
}

/// Binary entropy derivative `log((1 − p)/p)`.
pub fn entropy_binary_derivative(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("p = {p} outside (0, 1)")));
    }
    Ok(((1.0 - p) / p).ln())
}

/// Forward-pass state reused by both ADR backward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdrCache {
    pub p: ProbVector,
    pub phi_kind: PhiKind,
    pub phi: Uncertainty,
    pub topk: TopKStats,
    pub tau: usize,
    /// `log F`, kept to avoid re-deriving it from an underflowed `F`.
    pub log_value: f64,
    pub value: f64,
}

/// ADR value, evaluated in log space.
pub fn adr_forward(p: &ProbVector, tau: usize, phi_kind: PhiKind) -> Result<(f64, AdrCache)> {
    let topk = topk_stats(p, tau)?;
    let phi = phi_kind.eval(p);
    let f = phi.value();
    let log_value = -(tau as f64 / 2.0) * (2.0 * PI * f).ln() - topk.t_value / (2.0 * f);
    let value = log_value.exp();
    let cache = AdrCache {
        p: p.clone(),
        phi_kind,
        phi,
        topk,
        tau,
        log_value,
        value,
    };
    Ok((value, cache))
}

/// Exact gradient of [`adr_forward`] with respect to all `c` probabilities.
///
/// The TopK index set is held fixed. Selected entries get the direct
/// `−F·ŷ/φ` term; every entry gets `∂F/∂φ · ∂φ/∂p_k` with
/// `∂F/∂φ = F·(T − τφ)/(2φ²)`.
pub fn adr_backward_exact(cache: &AdrCache) -> Vec<f64> {
    let f = cache.value;
    let phi = cache.phi.value();
    let t = cache.topk.t_value;
    let dphi = cache.phi_kind.grad(&cache.p, cache.phi);
    let df_dphi = f * (t - cache.tau as f64 * phi) / (2.0 * phi * phi);
    let mut grad: Vec<f64> = dphi.iter().map(|d| df_dphi * d).collect();
    for (&i, &y) in cache.topk.indices.iter().zip(&cache.topk.selected) {
        grad[i] -= f * y / phi;
    }
    grad
}

/// Result of the published closed-form backward over the selected entries.
#[derive(Debug, Clone, PartialEq)]
pub struct PaperBackward {
    /// One entry per selected class, in [`TopKStats::indices`] order.
    pub grad: Vec<f64>,
    /// Set when a selected probability equals 1 and `φ'` is singular; `grad`
    /// then holds the exact gradient at the selected indices instead.
    pub degenerate: bool,
}

/// `φ'_j = −(φ + log ŷ_j)/(1 − ŷ_j)`, the published uncertainty derivative.
pub fn paper_phi_derivative(phi: f64, y: f64) -> Option<f64> {
    let denom = 1.0 - y;
    if denom <= 0.0 {
        return None;
    }
    let d = -(phi + y.ln()) / denom;
    d.is_finite().then_some(d)
}

/// Published backward: for each selected entry,
/// `F·(ŷ²φ' − 2ŷφ − φφ')/(2φ²)` with cached `F` and `φ`.
///
/// Only defined for the entropy uncertainty.
pub fn adr_backward_paper(cache: &AdrCache) -> Result<PaperBackward> {
    if cache.phi_kind != PhiKind::Entropy {
        return Err(Error::InvalidArgument(
            "published backward is only defined for the entropy uncertainty".into(),
        ));
    }
    let f = cache.value;
    let phi = cache.phi.value();
    let denom = 2.0 * phi * phi;
    let mut grad = Vec::with_capacity(cache.tau);
    for &y in &cache.topk.selected {
        match paper_phi_derivative(phi, y) {
            Some(dphi) => grad.push(f * (y * y * dphi - 2.0 * y * phi - phi * dphi) / denom),
            None => {
                let exact = adr_backward_exact(cache);
                return Ok(PaperBackward {
                    grad: cache.topk.indices.iter().map(|&i| exact[i]).collect(),
                    degenerate: true,
                });
            }
        }
    }
    Ok(PaperBackward {
        grad,
        degenerate: false,
    })
}

/// `CE + γ·F` with the gradient taken with respect to the logits.
pub fn combined_forward_backward(
    logits: &LogitVector,
    label: usize,
    hyper: AdrHyper,
    phi_kind: PhiKind,
) -> Result<LossOutput> {
    hyper.check_classes(logits.len())?;
    let ce = ce_forward_backward(logits, label)?;
    let p = softmax(logits);
    Ok(add_adr(ce, &p, hyper, phi_kind)?.0)
}

fn add_adr(
    mut base: LossOutput,
    p: &ProbVector,
    hyper: AdrHyper,
    phi_kind: PhiKind,
) -> Result<(LossOutput, f64)> {
    let (f, cache) = adr_forward(p, hyper.tau, phi_kind)?;
    let g = softmax_vjp(p, &adr_backward_exact(&cache));
    for (b, gi) in base.grad.iter_mut().zip(g) {
        *b += hyper.gamma * gi;
    }
    base.value = base.parts.ce_part + hyper.gamma * f;
    base.parts.adr_part = f;
    Ok((base, f))
}

/// Training objectives selectable from an experiment config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "ce")]
    Ce,
    #[serde(rename = "ce+adr")]
    CeAdr,
    #[serde(rename = "ls")]
    Ls,
    #[serde(rename = "ls+adr")]
    LsAdr,
    #[serde(rename = "ce+entropy")]
    CeEntropy,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Ce,
        LossKind::CeAdr,
        LossKind::Ls,
        LossKind::LsAdr,
        LossKind::CeEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::CeAdr => "ce+adr",
            LossKind::Ls => "ls",
            LossKind::LsAdr => "ls+adr",
            LossKind::CeEntropy => "ce+entropy",
        }
    }

    pub fn uses_adr(self) -> bool {
        matches!(self, LossKind::CeAdr | LossKind::LsAdr)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown loss `{s}` (expected ce|ce+adr|ls|ls+adr|ce+entropy)"
                ))
            })
    }
}

/// A fully parameterized per-sample training objective.
///
/// `parts.adr_part` is filled for every kind so that ADR can be monitored on
/// runs that do not optimize it; it only enters `value` and `grad` for the
/// `+adr` kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub kind: LossKind,
    pub adr: AdrHyper,
    pub phi_kind: PhiKind,
    pub entropy: EntropyHyper,
    pub eps_ls: f64,
}

impl Objective {
    /// Weight multiplying `adr_part` in `value`.
    pub fn adr_weight(&self) -> f64 {
        if self.kind.uses_adr() {
            self.adr.gamma
        } else {
            0.0
        }
    }

    pub fn validate(&self, c: usize) -> Result<()> {
        self.adr.check_classes(c)?;
        if !(0.0..1.0).contains(&self.eps_ls) {
            return Err(Error::InvalidArgument(format!(
                "label smoothing epsilon {} outside [0, 1)",
                self.eps_ls
            )));
        }
        Ok(())
    }

    pub fn eval(&self, logits: &LogitVector, label: usize) -> Result<LossOutput> {
        let c = logits.len();
        let base = match self.kind {
            LossKind::Ce | LossKind::CeAdr | LossKind::CeEntropy => {
                ce_forward_backward(logits, label)?
            }
            LossKind::Ls | LossKind::LsAdr => {
                let target = label_smooth_targets(label, self.eps_ls, c)?;
                soft_ce_forward_backward(logits, &target)?
            }
        };
        let p = softmax(logits);
        match self.kind {
            LossKind::CeAdr | LossKind::LsAdr => Ok(add_adr(base, &p, self.adr, self.phi_kind)?.0),
            LossKind::Ce | LossKind::Ls => {
                let mut out = base;
                out.parts.adr_part = adr_forward(&p, self.adr.tau, self.phi_kind)?.0;
                Ok(out)
            }
            LossKind::CeEntropy => {
                let mut out = base;
                let reg = entropy_reg_forward_backward(&p, self.entropy);
                for (b, gi) in out.grad.iter_mut().zip(softmax_vjp(&p, &reg.grad)) {
                    *b += gi;
                }
                out.value += reg.value;
                out.parts.entropy_part = reg.parts.entropy_part;
                out.parts.adr_part = adr_forward(&p, self.adr.tau, self.phi_kind)?.0;
                Ok(out)
            }
        }
    }
}
