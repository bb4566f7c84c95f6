//! Regularizer curves along the uniform → one-hot slice
//! `p(t) = (1 − t)·uniform + t·onehot₀`.
//!
//! For the simplex families the reported derivative is `d/dt` of the value
//! along the slice, computed from the exact gradient. The `ce` and
//! `binary-entropy-derivative` families use their closed binary forms, so
//! their derivative is with respect to the top-class probability `p`.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::{
    adr_backward_exact, adr_forward, ce_binary_derivative, entropy_binary_derivative,
    entropy_reg_forward_backward, EntropyHyper,
};
use crate::simplex::{binary_entropy, PhiKind, ProbVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CurveFamily {
    Variance,
    Entropy,
    ExpVariance,
    ExpEntropy,
    Ce,
    BinaryEntropyDerivative,
}

impl CurveFamily {
    pub const ALL: [CurveFamily; 6] = [
        CurveFamily::Variance,
        CurveFamily::Entropy,
        CurveFamily::ExpVariance,
        CurveFamily::ExpEntropy,
        CurveFamily::Ce,
        CurveFamily::BinaryEntropyDerivative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CurveFamily::Variance => "variance",
            CurveFamily::Entropy => "entropy",
            CurveFamily::ExpVariance => "exp-variance",
            CurveFamily::ExpEntropy => "exp-entropy",
            CurveFamily::Ce => "ce",
            CurveFamily::BinaryEntropyDerivative => "binary-entropy-derivative",
        }
    }

    /// True for the families whose derivative is taken with respect to `p`.
    pub fn is_binary_form(self) -> bool {
        matches!(self, CurveFamily::Ce | CurveFamily::BinaryEntropyDerivative)
    }
}

impl fmt::Display for CurveFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CurveFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CurveFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown curve family `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveSample {
    pub family: CurveFamily,
    pub t: f64,
    /// Top-class probability at `t`.
    pub p: f64,
    pub value: f64,
    pub derivative: f64,
}

/// Slice point at `t`, clamped onto the simplex.
pub fn slice_point(c: usize, t: f64) -> Result<ProbVector> {
    let u = (1.0 - t) / c as f64;
    let mut v = vec![u; c];
    v[0] += t;
    ProbVector::clamped(v)
}

fn directional(grad: &[f64], c: usize) -> f64 {
    // d p / d t = onehot₀ − uniform
    let mean = grad.iter().sum::<f64>() / c as f64;
    grad[0] - mean
}

/// Value and derivative of one family at slice position `t ∈ (0, 1)`.
pub fn evaluate_at(family: CurveFamily, c: usize, tau: usize, t: f64) -> Result<CurveSample> {
    if c < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {c}")));
    }
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidArgument(format!("t = {t} outside (0, 1)")));
    }
    let p = slice_point(c, t)?;
    let top = p.as_slice()[0];
    let (value, derivative) = match family {
        CurveFamily::Variance => {
            let phi = PhiKind::Variance.eval(&p);
            let g = PhiKind::Variance.grad(&p, phi);
            (phi.value(), directional(&g, c))
        }
        CurveFamily::Entropy => {
            let out = entropy_reg_forward_backward(&p, EntropyHyper { lambda: 1.0 });
            (out.value, directional(&out.grad, c))
        }
        CurveFamily::ExpVariance | CurveFamily::ExpEntropy => {
            let kind = if family == CurveFamily::ExpVariance {
                PhiKind::Variance
            } else {
                PhiKind::Entropy
            };
            let (f, cache) = adr_forward(&p, tau, kind)?;
            (f, directional(&adr_backward_exact(&cache), c))
        }
        CurveFamily::Ce => (-top.ln(), ce_binary_derivative(top)?),
        CurveFamily::BinaryEntropyDerivative => {
            (binary_entropy(top), entropy_binary_derivative(top)?)
        }
    };
    Ok(CurveSample {
        family,
        t,
        p: top,
        value,
        derivative,
    })
}

/// Interior grid `t_i = i / (grid + 1)`, `i = 1..=grid`.
pub fn slice_grid(grid: usize) -> Vec<f64> {
    (1..=grid).map(|i| i as f64 / (grid + 1) as f64).collect()
}

pub fn slice_curve(family: CurveFamily, c: usize, tau: usize, grid: usize) -> Result<Vec<CurveSample>> {
    if grid < 3 {
        return Err(Error::InvalidArgument(format!("grid = {grid} must be at least 3")));
    }
    if tau == 0 || tau > c {
        return Err(Error::InvalidArgument(format!("tau = {tau} outside [1, {c}]")));
    }
    slice_grid(grid)
        .into_iter()
        .map(|t| evaluate_at(family, c, tau, t))
        .collect()
}

pub const CURVES_HEADER: &str = "family,c,tau,t,p,value,derivative";

/// All six families as CSV.
pub fn curves_csv(c: usize, tau: usize, grid: usize) -> Result<String> {
    let mut out = String::new();
    out.push_str(CURVES_HEADER);
    out.push('\n');
    for family in CurveFamily::ALL {
        for s in slice_curve(family, c, tau, grid)? {
            let _ = writeln!(
                out,
                "{},{c},{tau},{},{},{},{}",
                family, s.t, s.p, s.value, s.derivative
            );
        }
    }
    Ok(out)
}

/// Outcome of one qualitative shape check.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeGate {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl fmt::Display for ShapeGate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: measured {:.6e}, threshold {:.6e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold
        )
    }
}

/// Ratio of the largest `|derivative|` with `t ≥ tail_start` to the global one.
pub fn tail_ratio(samples: &[CurveSample], tail_start: f64) -> f64 {
    let global = samples.iter().map(|s| s.derivative.abs()).fold(0.0, f64::max);
    let tail = samples
        .iter()
        .filter(|s| s.t >= tail_start)
        .map(|s| s.derivative.abs())
        .fold(0.0, f64::max);
    tail / global
}

/// The shape checks on the exponential, entropy and binary-entropy curves.
pub fn shape_gates(c: usize, tau: usize, grid: usize) -> Result<Vec<ShapeGate>> {
    let mut gates = Vec::new();
    for family in [CurveFamily::ExpEntropy, CurveFamily::ExpVariance] {
        let samples = slice_curve(family, c, tau, grid)?;
        let ratio = tail_ratio(&samples, 0.9);
        gates.push(ShapeGate {
            name: format!("{family}: max |d| over t in [0.9,1) / global max |d|"),
            measured: ratio,
            threshold: 0.1,
            passed: ratio <= 0.1,
        });
    }
    let ent = slice_curve(CurveFamily::Entropy, c, tau, grid)?;
    let start = ent[0].derivative.abs();
    let late = evaluate_at(CurveFamily::Entropy, c, tau, 0.99)?.derivative.abs();
    gates.push(ShapeGate {
        name: "entropy: |d| at uniform end / |d| at t=0.99".into(),
        measured: start / late,
        threshold: 0.01,
        passed: start <= 0.01 * late,
    });
    let mid = entropy_binary_derivative(0.5)?;
    gates.push(ShapeGate {
        name: "binary entropy derivative at p=0.5".into(),
        measured: mid.abs(),
        threshold: 0.0,
        passed: mid == 0.0,
    });
    let fu = evaluate_at(CurveFamily::ExpEntropy, c, tau, 1e-9)?.value;
    let f99 = evaluate_at(CurveFamily::ExpEntropy, c, tau, 0.99)?.value;
    gates.push(ShapeGate {
        name: "exp-entropy: value(t=0.99) / value(uniform)".into(),
        measured: f99 / fu,
        threshold: 0.01,
        passed: fu >= 100.0 * f99,
    });
    Ok(gates)
}
