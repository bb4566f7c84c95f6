//! Gradient audit: every analytic backward against central differences at
//! random interior points, the exact-vs-published ADR backward comparison,
//! and a τ-scaling micro-benchmark of the published backward.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gradcheck::{central_difference, DEFAULT_ATOL, DEFAULT_RTOL, DEFAULT_STEP};
use crate::losses::{
    adr_backward_exact, adr_backward_paper, adr_forward, ce_forward_backward,
    combined_forward_backward, entropy_reg_forward_backward, label_smooth_targets,
    soft_ce_forward_backward, AdrHyper, EntropyHyper, LossKind, Objective,
};
use crate::model::{backward, forward, Matrix, MlpParams};
use crate::simplex::{softmax, softmax_slice, softmax_vjp, LogitVector, PhiKind, ProbVector};

/// `(c, τ)` combinations cycled through by the sampled points.
pub const GRID: [(usize, usize); 9] = [
    (5, 2),
    (5, 3),
    (5, 5),
    (10, 2),
    (10, 3),
    (10, 5),
    (100, 2),
    (100, 3),
    (100, 5),
];

/// Smallest probability allowed at an audit point.
pub const MIN_PROB: f64 = 1e-3;
/// Smallest gap between the τ-th and (τ+1)-th largest probability.
pub const MIN_TOPK_GAP: f64 = 1e-4;
/// Smallest hidden pre-activation magnitude at an MLP audit point.
pub const MIN_PREACTIVATION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub samples: usize,
    pub seed: u64,
    /// Relative error injected into the exact ADR gradient. Only for negative
    /// controls; `None` in normal use.
    pub perturb_adr: Option<f64>,
    /// Calls per timing trial in the micro-benchmark.
    pub bench_reps: usize,
}

impl AuditOptions {
    pub fn new(samples: usize, seed: u64) -> Self {
        AuditOptions {
            samples,
            seed,
            perturb_adr: None,
            bench_reps: 20_000,
        }
    }
}

/// Component with the largest error relative to its tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstCase {
    pub point: usize,
    pub c: usize,
    pub tau: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|a − n| / (atol + rtol·max(|a|, |n|))`; above 1 is a failure.
    pub tolerance_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckSummary {
    pub name: &'static str,
    pub points: usize,
    pub failed_points: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub worst: Option<WorstCase>,
}

impl CheckSummary {
    fn new(name: &'static str) -> Self {
        CheckSummary {
            name,
            points: 0,
            failed_points: 0,
            max_abs_err: 0.0,
            max_rel_err: 0.0,
            worst: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.points > 0 && self.failed_points == 0
    }

    fn record(&mut self, point: usize, c: usize, tau: usize, analytic: &[f64], numeric: &[f64]) {
        self.points += 1;
        let mut failed = false;
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            let diff = (a - n).abs();
            let scale = a.abs().max(n.abs());
            let ratio = diff / (DEFAULT_ATOL + DEFAULT_RTOL * scale);
            self.max_abs_err = self.max_abs_err.max(diff);
            if scale > 0.0 {
                self.max_rel_err = self.max_rel_err.max(diff / scale);
            }
            let ratio = if ratio.is_nan() { f64::INFINITY } else { ratio };
            failed |= ratio > 1.0;
            if self.worst.is_none_or(|w| ratio > w.tolerance_ratio) {
                self.worst = Some(WorstCase {
                    point,
                    c,
                    tau,
                    index: i,
                    analytic: a,
                    numeric: n,
                    tolerance_ratio: ratio,
                });
            }
        }
        if failed {
            self.failed_points += 1;
        }
    }
}

/// Published vs exact backward at one point, over the selected entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaperPoint {
    pub c: usize,
    pub tau: usize,
    pub phi: f64,
    pub value: f64,
    pub max_abs_diff: f64,
    /// `max|paper − exact| / max|exact|` over the selected entries.
    pub rel_diff: f64,
    /// Cosine between the two τ-vectors.
    pub cosine: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchResult {
    pub classes: usize,
    pub reps: usize,
    pub time_small: Duration,
    pub time_large: Duration,
    pub tau_small: usize,
    pub tau_large: usize,
}

impl BenchResult {
    pub const MAX_RATIO: f64 = 8.0;

    pub fn ratio(&self) -> f64 {
        self.time_large.as_secs_f64() / self.time_small.as_secs_f64().max(1e-12)
    }

    pub fn passed(&self) -> bool {
        self.ratio() <= Self::MAX_RATIO
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub options: AuditOptions,
    pub checks: Vec<CheckSummary>,
    pub paper: Vec<PaperPoint>,
    pub bench: BenchResult,
}

impl AuditReport {
    /// All exact-gradient checks pass.
    pub fn gradients_passed(&self) -> bool {
        self.checks.iter().all(CheckSummary::passed)
    }

    /// Check with the largest tolerance ratio.
    pub fn worst_check(&self) -> Option<&CheckSummary> {
        self.checks.iter().max_by(|a, b| {
            let r = |s: &CheckSummary| s.worst.map_or(0.0, |w| w.tolerance_ratio);
            r(a).total_cmp(&r(b))
        })
    }

    pub fn render(&self) -> String {
        let o = &self.options;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "gradient audit: samples={} seed={} h={DEFAULT_STEP:e} rtol={DEFAULT_RTOL:e} atol={DEFAULT_ATOL:e}",
            o.samples, o.seed
        );
        if let Some(d) = o.perturb_adr {
            let _ = writeln!(s, "NEGATIVE CONTROL: ADR gradient scaled by (1 + {d:e})");
        }
        let _ = writeln!(
            s,
            "interior points: min p >= {MIN_PROB:e}, top-k gap > {MIN_TOPK_GAP:e}; (c, tau) cycles over {GRID:?}"
        );
        s.push('\n');
        let _ = writeln!(
            s,
            "{:<26} {:>6} {:>6} {:>12} {:>12} {:>10}  worst (point, c, tau, index: analytic vs numeric)",
            "check", "points", "failed", "max_abs_err", "max_rel_err", "tol_ratio"
        );
        for c in &self.checks {
            let worst = c.worst.map_or("-".to_string(), |w| {
                format!(
                    "#{} c={} tau={} i={}: {:.12e} vs {:.12e}",
                    w.point, w.c, w.tau, w.index, w.analytic, w.numeric
                )
            });
            let _ = writeln!(
                s,
                "{:<26} {:>6} {:>6} {:>12.3e} {:>12.3e} {:>10.3e}  {}  [{}]",
                c.name,
                c.points,
                c.failed_points,
                c.max_abs_err,
                c.max_rel_err,
                c.worst.map_or(0.0, |w| w.tolerance_ratio),
                worst,
                if c.passed() { "PASS" } else { "FAIL" }
            );
        }

        s.push_str("\nexact vs published ADR backward (entropy uncertainty, selected entries)\n");
        let _ = writeln!(
            s,
            "{:>5} {:>4} {:>4} {:>10} {:>12} {:>12} {:>10} {:>8} degenerate",
            "point", "c", "tau", "phi", "F", "max_abs_diff", "rel_diff", "cosine"
        );
        for (i, p) in self.paper.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:>5} {:>4} {:>4} {:>10.6} {:>12.5e} {:>12.5e} {:>10.4e} {:>8.4} {}",
                i, p.c, p.tau, p.phi, p.value, p.max_abs_diff, p.rel_diff, p.cosine, p.degenerate
            );
        }
        let st = self.paper_stats();
        let _ = writeln!(
            s,
            "summary: points={} nonzero={} degenerate={} rel_diff mean={:.4e} median={:.4e} max={:.4e} min={:.4e} cosine mean={:.4}",
            self.paper.len(),
            st.nonzero,
            st.degenerate,
            st.mean,
            st.median,
            st.max,
            st.min,
            st.mean_cosine
        );

        let b = &self.bench;
        s.push_str("\npublished-backward tau scaling (cached F and phi)\n");
        let _ = writeln!(
            s,
            "c={} reps={} time(tau={})={:.3?} time(tau={})={:.3?} ratio={:.3} (limit {}) [{}]",
            b.classes,
            b.reps,
            b.tau_small,
            b.time_small,
            b.tau_large,
            b.time_large,
            b.ratio(),
            BenchResult::MAX_RATIO,
            if b.passed() { "PASS" } else { "FAIL" }
        );
        let _ = writeln!(
            s,
            "\nexact gradients: {}",
            if self.gradients_passed() { "PASS" } else { "FAIL" }
        );
        s
    }

    pub fn paper_stats(&self) -> PaperStats {
        let mut rel: Vec<f64> = self.paper.iter().map(|p| p.rel_diff).collect();
        rel.sort_by(f64::total_cmp);
        let n = rel.len().max(1) as f64;
        PaperStats {
            nonzero: self.paper.iter().filter(|p| p.max_abs_diff > 0.0).count(),
            degenerate: self.paper.iter().filter(|p| p.degenerate).count(),
            mean: rel.iter().sum::<f64>() / n,
            median: rel.get(rel.len() / 2).copied().unwrap_or(0.0),
            max: rel.last().copied().unwrap_or(0.0),
            min: rel.first().copied().unwrap_or(0.0),
            mean_cosine: self.paper.iter().map(|p| p.cosine).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaperStats {
    pub nonzero: usize,
    pub degenerate: usize,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub min: f64,
    pub mean_cosine: f64,
}

fn is_interior(z: &[f64], tau: usize) -> bool {
    let p = softmax_slice(z);
    if p.iter().any(|&v| v < MIN_PROB) {
        return false;
    }
    let mut sorted = p;
    sorted.sort_by(|a, b| b.total_cmp(a));
    tau >= sorted.len() || sorted[tau - 1] - sorted[tau] > MIN_TOPK_GAP
}

/// Random logits whose softmax is an interior point for `tau`.
fn interior_logits(rng: &mut ChaCha8Rng, c: usize, tau: usize) -> LogitVector {
    loop {
        let spread = rng.random_range(0.3..2.5);
        let z: Vec<f64> = (0..c).map(|_| rng.random_range(-spread..spread)).collect();
        if is_interior(&z, tau) {
            return LogitVector::new(z).expect("finite logits");
        }
    }
}

fn logits_of(x: &[f64]) -> LogitVector {
    LogitVector::new(x.to_vec()).expect("finite logits")
}

fn perturbed(mut g: Vec<f64>, delta: Option<f64>) -> Vec<f64> {
    if let Some(d) = delta {
        for v in &mut g {
            *v *= 1.0 + d;
        }
    }
    g
}

/// `p + Σ aᵢ (eᵢ − 1/c)`, which stays on the simplex.
fn tangent_point(p: &[f64], a: &[f64]) -> ProbVector {
    let mean = a.iter().sum::<f64>() / a.len() as f64;
    ProbVector::new(p.iter().zip(a).map(|(pi, ai)| pi + ai - mean).collect())
        .expect("tangent step stays on the simplex")
}

fn tangent_projection(g: &[f64]) -> Vec<f64> {
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    g.iter().map(|v| v - mean).collect()
}

/// A 3-8-c network and a batch of 4 whose hidden units are away from the
/// ReLU kink and whose output rows are interior points for `tau`.
fn mlp_point(
    rng: &mut ChaCha8Rng,
    c: usize,
    tau: usize,
    seed: u64,
) -> Result<(MlpParams, Matrix, Vec<usize>)> {
    let sizes = [3, 8, c];
    for attempt in 0u64.. {
        let mut params = MlpParams::init(&sizes, seed.wrapping_add(attempt))?;
        // Smaller output weights keep the softmax away from the floor.
        let out_start = 3 * 8 + 8;
        for w in &mut params.theta[out_start..] {
            *w *= 0.5;
        }
        let x: Vec<f64> = (0..4 * 3).map(|_| rng.random_range(-1.5..1.5)).collect();
        let batch = Matrix::from_vec(4, 3, x)?;
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..c)).collect();
        let (logits, cache) = forward(&params, &batch)?;
        let clear = cache
            .hidden_preactivations()
            .iter()
            .all(|m| m.data.iter().all(|v| v.abs() > MIN_PREACTIVATION))
            && (0..logits.rows).all(|r| is_interior(logits.row(r), tau));
        if clear {
            return Ok((params, batch, labels));
        }
    }
    unreachable!()
}

fn mlp_loss(objective: &Objective, params: &MlpParams, batch: &Matrix, labels: &[usize]) -> f64 {
    let (logits, _) = forward(params, batch).expect("shapes match");
    labels
        .iter()
        .enumerate()
        .map(|(r, &l)| {
            objective
                .eval(&logits_of(logits.row(r)), l)
                .expect("valid objective")
                .value
        })
        .sum::<f64>()
        / labels.len() as f64
}

fn mlp_grad(
    objective: &Objective,
    params: &MlpParams,
    batch: &Matrix,
    labels: &[usize],
    delta: Option<f64>,
) -> Result<Vec<f64>> {
    let (logits, cache) = forward(params, batch)?;
    let b = labels.len() as f64;
    let mut d = Matrix::zeros(logits.rows, logits.cols);
    for (r, &l) in labels.iter().enumerate() {
        let z = logits_of(logits.row(r));
        let mut g = objective.eval(&z, l)?.grad;
        if delta.is_some() {
            let p = softmax(&z);
            let (_, ac) = adr_forward(&p, objective.adr.tau, objective.phi_kind)?;
            let extra = softmax_vjp(&p, &perturbed(adr_backward_exact(&ac), delta));
            let base = softmax_vjp(&p, &adr_backward_exact(&ac));
            for ((gi, e), bi) in g.iter_mut().zip(extra).zip(base) {
                *gi += objective.adr.gamma * (e - bi);
            }
        }
        for (o, gi) in d.row_mut(r).iter_mut().zip(g) {
            *o = gi / b;
        }
    }
    backward(params, &cache, &d)
}

/// Runs every check. Errors only on invalid options.
pub fn run_audit(options: AuditOptions) -> Result<AuditReport> {
    if options.samples == 0 {
        return Err(Error::InvalidArgument("gradcheck needs at least one sample".into()));
    }
    let h = DEFAULT_STEP;
    let delta = options.perturb_adr;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut ce = CheckSummary::new("ce");
    let mut ls = CheckSummary::new("ls");
    let mut ent = CheckSummary::new("entropy");
    let mut adr_tan = CheckSummary::new("adr-exact (simplex)");
    let mut adr_logit = CheckSummary::new("adr-exact (logits)");
    let mut adr_var = CheckSummary::new("adr-exact variance");
    let mut comb = CheckSummary::new("ce+adr combined");
    let mut mlp = CheckSummary::new("mlp parameters");
    let mut paper = Vec::with_capacity(options.samples);

    for point in 0..options.samples {
        let (c, tau) = GRID[point % GRID.len()];
        let z = interior_logits(&mut rng, c, tau);
        let label = rng.random_range(0..c);
        let p = softmax(&z);

        let a = ce_forward_backward(&z, label)?.grad;
        let n = central_difference(|x| ce_forward_backward(&logits_of(x), label).unwrap().value, z.as_slice(), h)?;
        ce.record(point, c, tau, &a, &n);

        let eps = rng.random_range(0.05..0.3);
        let target = label_smooth_targets(label, eps, c)?;
        let a = soft_ce_forward_backward(&z, &target)?.grad;
        let n = central_difference(
            |x| soft_ce_forward_backward(&logits_of(x), &target).unwrap().value,
            z.as_slice(),
            h,
        )?;
        ls.record(point, c, tau, &a, &n);

        let hyper = EntropyHyper::new(rng.random_range(0.05..1.0))?;
        let a = softmax_vjp(&p, &entropy_reg_forward_backward(&p, hyper).grad);
        let n = central_difference(
            |x| entropy_reg_forward_backward(&softmax(&logits_of(x)), hyper).value,
            z.as_slice(),
            h,
        )?;
        ent.record(point, c, tau, &a, &n);

        let (_, cache) = adr_forward(&p, tau, PhiKind::Entropy)?;
        let exact = perturbed(adr_backward_exact(&cache), delta);
        let a = tangent_projection(&exact);
        let zero = vec![0.0; c];
        let n = central_difference(
            |x| adr_forward(&tangent_point(p.as_slice(), x), tau, PhiKind::Entropy).unwrap().0,
            &zero,
            h,
        )?;
        adr_tan.record(point, c, tau, &a, &n);

        let a = softmax_vjp(&p, &exact);
        let n = central_difference(
            |x| adr_forward(&softmax(&logits_of(x)), tau, PhiKind::Entropy).unwrap().0,
            z.as_slice(),
            h,
        )?;
        adr_logit.record(point, c, tau, &a, &n);

        let (_, vcache) = adr_forward(&p, tau, PhiKind::Variance)?;
        let a = softmax_vjp(&p, &perturbed(adr_backward_exact(&vcache), delta));
        let n = central_difference(
            |x| adr_forward(&softmax(&logits_of(x)), tau, PhiKind::Variance).unwrap().0,
            z.as_slice(),
            h,
        )?;
        adr_var.record(point, c, tau, &a, &n);

        let adr = AdrHyper::new(rng.random_range(0.01..1.0), tau)?;
        let mut a = combined_forward_backward(&z, label, adr, PhiKind::Entropy)?.grad;
        if delta.is_some() {
            let clean = softmax_vjp(&p, &adr_backward_exact(&cache));
            let dirty = softmax_vjp(&p, &exact);
            for ((ai, d), cl) in a.iter_mut().zip(dirty).zip(clean) {
                *ai += adr.gamma * (d - cl);
            }
        }
        let n = central_difference(
            |x| combined_forward_backward(&logits_of(x), label, adr, PhiKind::Entropy).unwrap().value,
            z.as_slice(),
            h,
        )?;
        comb.record(point, c, tau, &a, &n);

        let objective = Objective {
            kind: LossKind::CeAdr,
            adr: AdrHyper::new(rng.random_range(0.05..1.0), tau)?,
            phi_kind: PhiKind::Entropy,
            entropy: EntropyHyper::new(0.0)?,
            eps_ls: 0.0,
        };
        let (params, batch, labels) = mlp_point(&mut rng, c, tau, options.seed.wrapping_add(point as u64))?;
        let a = mlp_grad(&objective, &params, &batch, &labels, delta)?;
        let mut probe = params.clone();
        let n = central_difference(
            |theta| {
                probe.theta.copy_from_slice(theta);
                mlp_loss(&objective, &probe, &batch, &labels)
            },
            &params.theta,
            h,
        )?;
        mlp.record(point, c, tau, &a, &n);

        paper.push(paper_point(&cache)?);
    }

    Ok(AuditReport {
        options,
        checks: vec![ce, ls, ent, adr_tan, adr_logit, adr_var, comb, mlp],
        paper,
        bench: bench_paper_backward(options.seed, options.bench_reps)?,
    })
}

fn paper_point(cache: &crate::losses::AdrCache) -> Result<PaperPoint> {
    let exact = adr_backward_exact(cache);
    let pub_ = adr_backward_paper(cache)?;
    let ex: Vec<f64> = cache.topk.indices.iter().map(|&i| exact[i]).collect();
    let max_abs_diff = ex
        .iter()
        .zip(&pub_.grad)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = ex.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let dot: f64 = ex.iter().zip(&pub_.grad).map(|(a, b)| a * b).sum();
    let na = ex.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = pub_.grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(PaperPoint {
        c: cache.p.len(),
        tau: cache.tau,
        phi: cache.phi.value(),
        value: cache.value,
        max_abs_diff,
        rel_diff: if scale > 0.0 { max_abs_diff / scale } else { 0.0 },
        cosine: if na > 0.0 && nb > 0.0 { dot / (na * nb) } else { 0.0 },
        degenerate: pub_.degenerate,
    })
}

/// Best-of-several wall time of `reps` published-backward calls at τ=16 and
/// τ=64 on one `c = 256` point, with the forward pass cached.
pub fn bench_paper_backward(seed: u64, reps: usize) -> Result<BenchResult> {
    let classes = 256;
    let (tau_small, tau_large) = (16, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xBE7C);
    let z: Vec<f64> = (0..classes).map(|_| rng.random_range(-1.0..1.0)).collect();
    let p = softmax(&LogitVector::new(z)?);
    let time = |tau: usize| -> Result<Duration> {
        let (_, cache) = adr_forward(&p, tau, PhiKind::Entropy)?;
        let mut best = Duration::MAX;
        for _ in 0..7 {
            let start = Instant::now();
            for _ in 0..reps {
                black_box(adr_backward_paper(black_box(&cache))?);
            }
            best = best.min(start.elapsed());
        }
        Ok(best)
    };
    let time_small = time(tau_small)?;
    let time_large = time(tau_large)?;
    Ok(BenchResult {
        classes,
        reps,
        time_small,
        time_large,
        tau_small,
        tau_large,
    })
}
