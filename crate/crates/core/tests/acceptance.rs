//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Tolerances are pinned below.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use adr::audit::{run_audit, AuditOptions};
use adr::config::ExperimentConfig;
use adr::curves::{shape_gates, slice_point};
use adr::experiment::{cmd_curves, cmd_noise, cmd_sweep, cmd_train, mean_std, TrainSummary};
use adr::losses::{adr_backward_exact, adr_forward, LossKind};
use adr::model::Matrix;
use adr::simplex::{PhiKind, ProbVector};
use adr::trainer::{expected_calibration_error, topk_accuracy, EpochRow};

const GRADCHECK_SAMPLES: usize = 100;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
const GRAD_RATIO_LIMIT: f64 = 1e-3;
const VALUE_RATIO_LIMIT: f64 = 1e-4;
/// F at the uniform point, c = 10, τ = 3: (2π)^(−3/2)·e^(−0.015).
const F_UNIFORM_REF: f64 = 0.06254833884763084;
/// F at max-probability 0.99 (rest uniform), c = 10, τ = 3.
const F_099_REF: f64 = 5.288e-6;
const REF_RTOL: f64 = 1e-3;
const IDENTITY_TOL: f64 = 1e-9;
const BENCH_LIMIT: f64 = 8.0;
const METRIC_TOL: f64 = 1e-12;
const TRAINING_BUDGET: Duration = Duration::from_secs(120);
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const NOISE_RATES: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Slice point with top probability `top` and the rest spread evenly.
fn with_top(c: usize, top: f64) -> ProbVector {
    let t = (top - 1.0 / c as f64) / (1.0 - 1.0 / c as f64);
    slice_point(c, t).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let report = run_audit(AuditOptions::new(GRADCHECK_SAMPLES, 0)).unwrap();
    let elapsed = start.elapsed();
    let mut lines = Vec::new();
    let mut ok = elapsed < GRADCHECK_BUDGET;
    for c in &report.checks {
        ok &= c.passed() && c.points >= GRADCHECK_SAMPLES;
        lines.push(format!(
            "{}: {}/{} points pass, max rel err {:.2e}",
            c.name,
            c.points - c.failed_points,
            c.points,
            c.max_rel_err
        ));
    }
    outcome(ok, format!("{} in {elapsed:.2?} (budget {GRADCHECK_BUDGET:?})", lines.join("; ")))
}

fn criterion_2() -> Outcome {
    let (c, tau) = (10, 3);
    let grad_norm = |p: &ProbVector| {
        let (_, cache) = adr_forward(p, tau, PhiKind::Entropy).unwrap();
        norm(&adr_backward_exact(&cache))
    };
    let u = ProbVector::uniform(c).unwrap();
    let peaked = with_top(c, 0.999);
    let g_ratio = grad_norm(&peaked) / grad_norm(&u);
    let f_u = adr_forward(&u, tau, PhiKind::Entropy).unwrap().0;
    let f_99 = adr_forward(&with_top(c, 0.99), tau, PhiKind::Entropy).unwrap().0;
    let v_ratio = f_99 / f_u;
    let refs_ok = rel(f_u, F_UNIFORM_REF) < REF_RTOL && rel(f_99, F_099_REF) < REF_RTOL;
    outcome(
        g_ratio <= GRAD_RATIO_LIMIT && v_ratio <= VALUE_RATIO_LIMIT && refs_ok,
        format!(
            "|grad F|(0.999)/|grad F|(uniform) = {g_ratio:.3e} (<= {GRAD_RATIO_LIMIT:e}); \
             F(0.99)/F(uniform) = {f_99:.4e}/{f_u:.5} = {v_ratio:.3e} (<= {VALUE_RATIO_LIMIT:e}); \
             references within {REF_RTOL:e}: {refs_ok}"
        ),
    )
}

fn base_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.run.out = out.to_path_buf();
    cfg.run.seeds = SEEDS.to_vec();
    cfg
}

fn metric_values(r: &EpochRow) -> [f64; 10] {
    [
        r.epoch as f64,
        r.train_loss,
        r.train_ce_part,
        r.train_adr_part,
        r.train_acc,
        r.val_loss,
        r.val_acc_top1,
        r.val_acc_topk,
        r.ece,
        r.train_conf,
    ]
}

fn criterion_3(tmp: &Path) -> Outcome {
    let mut ce = base_config(&tmp.join("c3-ce"));
    ce.run.seeds = vec![0, 1];
    ce.run.epochs = 20;
    ce.loss.kind = LossKind::Ce;
    let mut adr = ce.clone();
    adr.run.out = tmp.join("c3-adr");
    adr.loss.kind = LossKind::CeAdr;
    adr.loss.gamma = 0.0;
    let a = cmd_train(&ce).unwrap();
    let b = cmd_train(&adr).unwrap();
    let mut worst = 0.0f64;
    let mut rows = 0;
    for (ra, rb) in a.runs.iter().zip(&b.runs) {
        assert_eq!(ra.record.rows.len(), rb.record.rows.len());
        for (x, y) in ra.record.rows.iter().zip(&rb.record.rows) {
            rows += 1;
            for (u, v) in metric_values(x).iter().zip(metric_values(y)) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    outcome(
        worst <= IDENTITY_TOL && rows == 40,
        format!("gamma=0 ce+adr vs ce over {rows} epoch rows: max |diff| = {worst:e} (<= {IDENTITY_TOL:e})"),
    )
}

fn criterion_4() -> Outcome {
    let report = run_audit(AuditOptions::new(GRADCHECK_SAMPLES, 0)).unwrap();
    let text = report.render();
    let st = report.paper_stats();
    let present = text.contains("exact vs published ADR backward")
        && report.paper.len() == GRADCHECK_SAMPLES
        && text.contains("summary: points=");
    let ratio = report.bench.ratio();
    outcome(
        present && ratio <= BENCH_LIMIT,
        format!(
            "comparison section with {} per-point rows (rel diff mean {:.3e}, max {:.3e}, {} nonzero); \
             time(tau=64)/time(tau=16) = {ratio:.2} (<= {BENCH_LIMIT})",
            report.paper.len(),
            st.mean,
            st.max,
            st.nonzero
        ),
    )
}

fn criterion_5() -> Outcome {
    let gates = shape_gates(10, 3, 200).unwrap();
    let ok = gates.iter().all(|g| g.passed);
    let detail: Vec<String> = gates.iter().map(|g| g.to_string()).collect();
    outcome(ok, detail.join("; "))
}

fn criterion_6() -> Outcome {
    let mut checks = Vec::new();
    let mut conf = vec![0.7; 10];
    let mut correct: Vec<bool> = (0..10).map(|i| i < 7).collect();
    conf.extend([0.2; 5]);
    correct.extend([true, false, false, false, false]);
    let calibrated = expected_calibration_error(&conf, &correct, 15).unwrap();
    checks.push(("calibrated stream", calibrated, 0.0));
    let single = expected_calibration_error(&[0.9], &[true], 15).unwrap();
    checks.push(("single sample", single, 0.1));
    let half = expected_calibration_error(&[1.0; 4], &[true, false, true, false], 15).unwrap();
    checks.push(("all-confident half right", half, 0.5));

    let logits = Matrix::from_vec(3, 3, vec![2.0, 1.0, 0.0, 0.5, 0.2, 0.9, 0.0, 3.0, 1.0]).unwrap();
    let labels = [0, 0, 1];
    checks.push(("top-1 hand case", topk_accuracy(&logits, &labels, 1).unwrap(), 2.0 / 3.0));
    checks.push(("top-2 hand case", topk_accuracy(&logits, &labels, 2).unwrap(), 1.0));
    checks.push(("top-c", topk_accuracy(&logits, &labels, 3).unwrap(), 1.0));
    let ok = checks.iter().all(|(_, got, want)| (got - want).abs() <= METRIC_TOL);
    let detail: Vec<String> = checks
        .iter()
        .map(|(name, got, want)| format!("{name} {got} (want {want})"))
        .collect();
    outcome(ok, detail.join("; "))
}

fn finals(s: &TrainSummary, f: fn(&EpochRow) -> f64) -> Vec<f64> {
    s.finals(f)
}

fn criterion_7(tmp: &Path) -> Outcome {
    let start = Instant::now();
    let mut summaries = BTreeMap::new();
    for kind in LossKind::ALL {
        let mut cfg = base_config(&tmp.join(format!("c7-{}", kind.name())));
        cfg.loss.kind = kind;
        summaries.insert(kind.name(), cmd_train(&cfg).unwrap());
    }
    let elapsed = start.elapsed();
    let mut parts = Vec::new();
    for kind in LossKind::ALL {
        let (m, s) = summaries[kind.name()].val_top1();
        parts.push(format!("{} {m:.4}±{s:.4}", kind.name()));
    }
    let ce = &summaries["ce"];
    let adr = &summaries["ce+adr"];
    let (ce_mean, _) = ce.val_top1();
    let (adr_mean, _) = adr.val_top1();
    let ce_conf = finals(ce, |r| r.train_conf);
    let adr_conf = finals(adr, |r| r.train_conf);
    let conf_every_seed = ce_conf.len() == SEEDS.len()
        && ce_conf.iter().zip(&adr_conf).all(|(c, a)| a > c);
    let margins: Vec<String> = ce_conf
        .iter()
        .zip(&adr_conf)
        .map(|(c, a)| format!("{:+.2e}", a - c))
        .collect();
    outcome(
        adr_mean >= ce_mean && conf_every_seed && elapsed < TRAINING_BUDGET,
        format!(
            "val top-1: {}; ce+adr - ce = {:+.4}; train confidence margin per seed [{}]; {elapsed:.1?} (budget {TRAINING_BUDGET:?})",
            parts.join(", "),
            adr_mean - ce_mean,
            margins.join(", ")
        ),
    )
}

fn criterion_8(tmp: &Path) -> Outcome {
    let cfg = base_config(&tmp.join("c8"));
    let noise = cmd_noise(&cfg, &NOISE_RATES).unwrap();
    let mut parts = Vec::new();
    for rate in NOISE_RATES {
        let (c, _) = noise.cell(rate, LossKind::Ce).unwrap().val_top1();
        let (a, _) = noise.cell(rate, LossKind::CeAdr).unwrap().val_top1();
        parts.push(format!("NR={rate}: ce {c:.4} ce+adr {a:.4}"));
    }
    let (c2, _) = noise.cell(0.2, LossKind::Ce).unwrap().val_top1();
    let (a2, _) = noise.cell(0.2, LossKind::CeAdr).unwrap().val_top1();
    let csv = fs::read_to_string(cfg.run.out.join("noise.csv")).unwrap();
    let curves_ok = NOISE_RATES.iter().all(|r| {
        let prefix = format!("{r},");
        csv.lines().filter(|l| l.starts_with(&prefix)).count() == 2 * SEEDS.len() * cfg.run.epochs
    });
    let corrupted_ok = noise
        .cells
        .iter()
        .all(|c| c.summary.runs.iter().all(|r| r.corrupted == (c.rate * 1000.0).round() as usize));
    let conf_sd = mean_std(&noise.cell(0.2, LossKind::CeAdr).unwrap().finals(|r| r.val_acc_top1)).1;
    outcome(
        a2 >= c2 && curves_ok && corrupted_ok,
        format!(
            "{}; NR=0.2 ce+adr - ce = {:+.4} (seed sd {conf_sd:.4}); per-epoch curves for all rates: {curves_ok}; corrupted counts exact: {corrupted_ok}",
            parts.join("; "),
            a2 - c2
        ),
    )
}

fn csv_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_9(tmp: &Path) -> Outcome {
    let run_all = |root: &Path| {
        let mut cfg = base_config(&root.join("train"));
        cfg.run.epochs = 8;
        cfg.run.seeds = vec![3, 7];
        cfg.loss.kind = LossKind::CeAdr;
        cmd_train(&cfg).unwrap();
        let mut sweep = cfg.clone();
        sweep.run.out = root.join("sweep");
        cmd_sweep(&sweep, &[0.01, 0.1], &[2, 3]).unwrap();
        let mut noise = cfg.clone();
        noise.run.out = root.join("noise");
        cmd_noise(&noise, &[0.2, 0.4]).unwrap();
        cmd_curves(10, 3, 200, &root.join("curves")).unwrap();
        csv_files(root)
    };
    let a = run_all(&tmp.join("c9-a"));
    let b = run_all(&tmp.join("c9-b"));
    let identical = a == b && !a.is_empty();
    outcome(
        identical,
        format!("{} CSV files from train/sweep/noise/curves compared byte for byte: identical = {identical}", a.len()),
    )
}

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().unwrap();
    let tmp = tmp.path();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("1 gradient fidelity", Box::new(criterion_1)),
        ("2 adaptive gradient contract", Box::new(criterion_2)),
        ("3 zero-weight identity", Box::new(|| criterion_3(tmp))),
        ("4 published-backward report", Box::new(criterion_4)),
        ("5 curve shapes", Box::new(criterion_5)),
        ("6 metric correctness", Box::new(criterion_6)),
        ("7 desk-scale loss comparison", Box::new(|| criterion_7(tmp))),
        ("8 noise tolerance", Box::new(|| criterion_8(tmp))),
        ("9 reproducibility", Box::new(|| criterion_9(tmp))),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let o = run();
        if !o.passed {
            failed += 1;
        }
        println!(
            "acceptance {name}: {} | {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
