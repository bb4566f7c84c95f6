//! Batch experiments behind the command-line tool: multi-seed training,
//! γ×τ sweeps, label-noise runs, curve emission and the gradient audit.
//!
//! Independent runs execute in parallel; each writes only to its own
//! directory, and every output directory gets a `config.json` snapshot.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::audit::{run_audit, AuditOptions, AuditReport};
use crate::config::ExperimentConfig;
use crate::curves::{curves_csv, shape_gates, ShapeGate};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::trainer::{train, EpochRow, RunRecord, RunStatus};

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Serialize)]
struct RunSnapshot<'a> {
    config: &'a ExperimentConfig,
    seed: u64,
    classes: usize,
    tau: usize,
    layer_sizes: Vec<usize>,
    train_samples: usize,
    val_samples: usize,
    corrupted_labels: usize,
    status: String,
}

/// One finished seed.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub record: RunRecord,
    pub corrupted: usize,
    pub dir: PathBuf,
}

impl SeedOutcome {
    pub fn final_row(&self) -> Option<&EpochRow> {
        self.record.final_row()
    }

    pub fn diverged(&self) -> bool {
        matches!(self.record.status, RunStatus::Diverged { .. })
    }
}

/// Trains one seed and persists `metrics.csv`, `config.json` and
/// `checkpoint.bin` under `dir`.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedOutcome> {
    let data = cfg.prepare_data(seed)?;
    let classes = data.train.classes;
    let spec = cfg.train_spec(classes)?;
    let record = train(&spec, &data.train, &data.val, seed)?;
    create_dir(dir)?;
    write(&dir.join("metrics.csv"), record.metrics_csv())?;
    record.params.save(&dir.join("checkpoint.bin"))?;
    let status = match record.status {
        RunStatus::Completed => "completed".to_string(),
        RunStatus::Diverged { epoch, loss } => format!("diverged at epoch {epoch} (loss {loss})"),
    };
    let snapshot = RunSnapshot {
        config: cfg,
        seed,
        classes,
        tau: spec.objective.adr.tau,
        layer_sizes: spec.layer_sizes(data.train.dim, classes),
        train_samples: data.train.len(),
        val_samples: data.val.len(),
        corrupted_labels: data.corrupted.len(),
        status,
    };
    let mut json = serde_json::to_string_pretty(&snapshot).expect("snapshot serializes");
    json.push('\n');
    write(&dir.join("config.json"), json)?;
    Ok(SeedOutcome {
        record,
        corrupted: data.corrupted.len(),
        dir: dir.to_path_buf(),
    })
}

fn run_jobs(jobs: Vec<(ExperimentConfig, u64, PathBuf)>) -> Result<Vec<SeedOutcome>> {
    jobs.into_par_iter()
        .map(|(cfg, seed, dir)| run_seed(&cfg, seed, &dir))
        .collect()
}

fn seed_dir(base: &Path, seed: u64) -> PathBuf {
    base.join(format!("seed-{seed}"))
}

/// All seeds of one configuration.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub loss: LossKind,
    pub runs: Vec<SeedOutcome>,
}

pub const SUMMARY_HEADER: &str =
    "seed,status,epochs,train_loss,train_acc,val_loss,val_acc_top1,val_acc_topk,ece,train_conf";

type Metric = (&'static str, fn(&EpochRow) -> f64);

const SUMMARY_METRICS: [Metric; 7] = [
    ("train_loss", |r| r.train_loss),
    ("train_acc", |r| r.train_acc),
    ("val_loss", |r| r.val_loss),
    ("val_acc_top1", |r| r.val_acc_top1),
    ("val_acc_topk", |r| r.val_acc_topk),
    ("ece", |r| r.ece),
    ("train_conf", |r| r.train_conf),
];

impl TrainSummary {
    pub fn diverged(&self) -> bool {
        self.runs.iter().any(SeedOutcome::diverged)
    }

    /// Final-epoch value of `metric` for each seed that completed at least
    /// one epoch.
    pub fn finals(&self, metric: fn(&EpochRow) -> f64) -> Vec<f64> {
        self.runs
            .iter()
            .filter_map(|r| r.final_row().map(metric))
            .collect()
    }

    pub fn val_top1(&self) -> (f64, f64) {
        mean_std(&self.finals(|r| r.val_acc_top1))
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(SUMMARY_HEADER);
        s.push('\n');
        for run in &self.runs {
            let status = if run.diverged() { "diverged" } else { "completed" };
            let _ = write!(s, "{},{status},{}", run.record.seed, run.record.rows.len());
            for (_, f) in SUMMARY_METRICS {
                let v = run.final_row().map_or(f64::NAN, f);
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        for (label, pick) in [("mean", 0usize), ("std", 1)] {
            let _ = write!(s, "{label},,");
            for (_, f) in SUMMARY_METRICS {
                let ms = mean_std(&self.finals(f));
                let _ = write!(s, ",{}", if pick == 0 { ms.0 } else { ms.1 });
            }
            s.push('\n');
        }
        s
    }

    /// Human-readable mean±std table; includes wall time, which is not
    /// persisted.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "loss {} over {} seed(s)", self.loss, self.runs.len());
        for (name, f) in SUMMARY_METRICS {
            let (m, sd) = mean_std(&self.finals(f));
            let _ = writeln!(s, "  {name:<14} {m:.4} ± {sd:.4}");
        }
        let wall: f64 = self.runs.iter().map(|r| r.record.wall_time.as_secs_f64()).sum();
        let _ = writeln!(s, "  wall time      {wall:.2}s (summed over seeds)");
        for r in self.runs.iter().filter(|r| r.diverged()) {
            if let RunStatus::Diverged { epoch, loss } = r.record.status {
                let _ = writeln!(s, "  seed {} DIVERGED at epoch {epoch} (loss {loss})", r.record.seed);
            }
        }
        s
    }
}

/// Trains every seed of `cfg` under `cfg.run.out`, writing per-seed records,
/// `summary.csv` and `config.json`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let out = &cfg.run.out;
    create_dir(out)?;
    write(&out.join("config.json"), cfg.to_json())?;
    let jobs = cfg
        .run
        .seeds
        .iter()
        .map(|&s| (cfg.clone(), s, seed_dir(out, s)))
        .collect();
    let summary = TrainSummary {
        loss: cfg.loss.kind,
        runs: run_jobs(jobs)?,
    };
    write(&out.join("summary.csv"), summary.summary_csv())?;
    Ok(summary)
}

/// One `(γ, τ)` cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub tau: usize,
    pub mean_val_top1: f64,
    pub std_val_top1: f64,
    pub ce_baseline_mean: f64,
    /// Mean within half a percentage point of the CE baseline or above it.
    pub within_soft_band: bool,
}

pub const SWEEP_HEADER: &str =
    "gamma,tau,mean_val_top1,std_val_top1,ce_baseline_mean,within_soft_band";

/// Allowed shortfall of a sweep cell below the CE baseline.
pub const SOFT_BAND: f64 = 0.005;

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub baseline: TrainSummary,
    pub cells: Vec<TrainSummary>,
}

impl SweepSummary {
    pub fn diverged(&self) -> bool {
        self.baseline.diverged() || self.cells.iter().any(TrainSummary::diverged)
    }

    pub fn csv(&self) -> String {
        let mut s = String::from(SWEEP_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.gamma, r.tau, r.mean_val_top1, r.std_val_top1, r.ce_baseline_mean, r.within_soft_band
            );
        }
        s
    }

    pub fn render(&self) -> String {
        let (bm, bs) = self.baseline.val_top1();
        let mut s = format!("ce baseline val top-1 {bm:.4} ± {bs:.4}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "  gamma={:<6} tau={:<3} val top-1 {:.4} ± {:.4}  {}",
                r.gamma,
                r.tau,
                r.mean_val_top1,
                r.std_val_top1,
                if r.within_soft_band { "within band" } else { "below band (reported)" }
            );
        }
        s
    }
}

fn cell_dir(out: &Path, gamma: f64, tau: usize) -> PathBuf {
    out.join(format!("gamma-{gamma}_tau-{tau}"))
}

/// Trains the CE baseline and every `(γ, τ)` cell with the ADR variant of
/// the configured loss (`ls+adr` when the config says `ls` or `ls+adr`,
/// `ce+adr` otherwise).
pub fn cmd_sweep(cfg: &ExperimentConfig, gammas: &[f64], taus: &[usize]) -> Result<SweepSummary> {
    if gammas.is_empty() || taus.is_empty() {
        return Err(Error::Config("sweep grids must not be empty".into()));
    }
    cfg.validate()?;
    let adr_kind = match cfg.loss.kind {
        LossKind::Ls | LossKind::LsAdr => LossKind::LsAdr,
        _ => LossKind::CeAdr,
    };
    let mut cell_cfgs = Vec::new();
    for &gamma in gammas {
        for &tau in taus {
            let mut c = cfg.clone();
            c.loss.kind = adr_kind;
            c.loss.gamma = gamma;
            c.loss.tau = Some(tau);
            c.run.out = cell_dir(&cfg.run.out, gamma, tau);
            c.validate()?;
            cell_cfgs.push(c);
        }
    }
    let mut base = cfg.clone();
    base.loss.kind = LossKind::Ce;
    base.run.out = cfg.run.out.join("baseline-ce");

    let out = &cfg.run.out;
    create_dir(out)?;
    write(&out.join("config.json"), cfg.to_json())?;
    let all: Vec<&ExperimentConfig> = std::iter::once(&base).chain(&cell_cfgs).collect();
    for c in &all {
        create_dir(&c.run.out)?;
        write(&c.run.out.join("config.json"), c.to_json())?;
    }
    let jobs = all
        .iter()
        .flat_map(|c| {
            c.run
                .seeds
                .iter()
                .map(|&s| ((*c).clone(), s, seed_dir(&c.run.out, s)))
        })
        .collect();
    let mut outcomes = run_jobs(jobs)?.into_iter();
    let n = cfg.run.seeds.len();
    let mut take = |loss| TrainSummary {
        loss,
        runs: outcomes.by_ref().take(n).collect(),
    };
    let baseline = take(LossKind::Ce);
    let cells: Vec<TrainSummary> = cell_cfgs.iter().map(|_| take(adr_kind)).collect();
    for (c, summary) in cell_cfgs.iter().zip(&cells) {
        write(&c.run.out.join("summary.csv"), summary.summary_csv())?;
    }
    write(&base.run.out.join("summary.csv"), baseline.summary_csv())?;

    let (base_mean, _) = baseline.val_top1();
    let rows = cell_cfgs
        .iter()
        .zip(&cells)
        .map(|(c, summary)| {
            let (m, sd) = summary.val_top1();
            SweepRow {
                gamma: c.loss.gamma,
                tau: c.loss.tau.expect("set above"),
                mean_val_top1: m,
                std_val_top1: sd,
                ce_baseline_mean: base_mean,
                within_soft_band: m >= base_mean - SOFT_BAND,
            }
        })
        .collect();
    let sweep = SweepSummary {
        rows,
        baseline,
        cells,
    };
    write(&out.join("sweep.csv"), sweep.csv())?;
    Ok(sweep)
}

/// Losses compared by [`cmd_noise`].
pub const NOISE_LOSSES: [LossKind; 2] = [LossKind::Ce, LossKind::CeAdr];

#[derive(Debug, Clone)]
pub struct NoiseCell {
    pub rate: f64,
    pub summary: TrainSummary,
}

#[derive(Debug, Clone)]
pub struct NoiseSummary {
    pub cells: Vec<NoiseCell>,
}

pub const NOISE_HEADER: &str = "rate,loss,seed,epoch,corrupted,train_acc,val_acc_top1";
pub const NOISE_TABLE_HEADER: &str = "rate,loss,mean_val_top1,std_val_top1,corrupted";

impl NoiseSummary {
    pub fn diverged(&self) -> bool {
        self.cells.iter().any(|c| c.summary.diverged())
    }

    pub fn cell(&self, rate: f64, loss: LossKind) -> Option<&TrainSummary> {
        self.cells
            .iter()
            .find(|c| c.rate == rate && c.summary.loss == loss)
            .map(|c| &c.summary)
    }

    /// Per-epoch train and validation accuracy for every run.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from(NOISE_HEADER);
        s.push('\n');
        for cell in &self.cells {
            for run in &cell.summary.runs {
                for row in &run.record.rows {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{},{}",
                        cell.rate,
                        cell.summary.loss,
                        run.record.seed,
                        row.epoch,
                        run.corrupted,
                        row.train_acc,
                        row.val_acc_top1
                    );
                }
            }
        }
        s
    }

    /// Final validation accuracy per rate and loss.
    pub fn table_csv(&self) -> String {
        let mut s = String::from(NOISE_TABLE_HEADER);
        s.push('\n');
        for cell in &self.cells {
            let (m, sd) = cell.summary.val_top1();
            let corrupted = cell.summary.runs.first().map_or(0, |r| r.corrupted);
            let _ = writeln!(s, "{},{},{m},{sd},{corrupted}", cell.rate, cell.summary.loss);
        }
        s
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for cell in &self.cells {
            let (m, sd) = cell.summary.val_top1();
            let corrupted = cell.summary.runs.first().map_or(0, |r| r.corrupted);
            let _ = writeln!(
                s,
                "  rate={:<5} {:<7} val top-1 {m:.4} ± {sd:.4} (corrupted labels: {corrupted})",
                cell.rate, cell.summary.loss
            );
        }
        s
    }
}

/// For each rate and each of [`NOISE_LOSSES`]: flip training labels, train
/// every seed, and write `noise.csv` (per-epoch curves) and
/// `noise_table.csv` (final accuracies).
pub fn cmd_noise(cfg: &ExperimentConfig, rates: &[f64]) -> Result<NoiseSummary> {
    if rates.is_empty() {
        return Err(Error::Config("noise rate list must not be empty".into()));
    }
    if let Some(r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Config(format!("noise rate {r} outside [0, 1]")));
    }
    cfg.validate()?;
    let out = &cfg.run.out;
    let mut cell_cfgs = Vec::new();
    for &rate in rates {
        for loss in NOISE_LOSSES {
            let mut c = cfg.clone();
            c.dataset.noise_rate = rate;
            c.loss.kind = loss;
            c.run.out = out.join(format!("rate-{rate}")).join(loss.name());
            c.validate()?;
            cell_cfgs.push((rate, c));
        }
    }
    create_dir(out)?;
    write(&out.join("config.json"), cfg.to_json())?;
    for (_, c) in &cell_cfgs {
        create_dir(&c.run.out)?;
        write(&c.run.out.join("config.json"), c.to_json())?;
    }
    let jobs = cell_cfgs
        .iter()
        .flat_map(|(_, c)| {
            c.run
                .seeds
                .iter()
                .map(|&s| (c.clone(), s, seed_dir(&c.run.out, s)))
        })
        .collect();
    let mut outcomes = run_jobs(jobs)?.into_iter();
    let n = cfg.run.seeds.len();
    let cells = cell_cfgs
        .iter()
        .map(|(rate, c)| NoiseCell {
            rate: *rate,
            summary: TrainSummary {
                loss: c.loss.kind,
                runs: outcomes.by_ref().take(n).collect(),
            },
        })
        .collect();
    let summary = NoiseSummary { cells };
    write(&out.join("noise.csv"), summary.curves_csv())?;
    write(&out.join("noise_table.csv"), summary.table_csv())?;
    Ok(summary)
}

#[derive(Serialize)]
struct CurvesSnapshot {
    c: usize,
    tau: usize,
    grid: usize,
}

/// Writes `curves.csv` and `curve_gates.txt`; returns the shape gates.
pub fn cmd_curves(c: usize, tau: usize, grid: usize, out: &Path) -> Result<Vec<ShapeGate>> {
    let csv = curves_csv(c, tau, grid)?;
    let gates = shape_gates(c, tau, grid)?;
    create_dir(out)?;
    write(&out.join("curves.csv"), csv)?;
    let mut json = serde_json::to_string_pretty(&CurvesSnapshot { c, tau, grid }).expect("serializes");
    json.push('\n');
    write(&out.join("config.json"), json)?;
    let report: String = gates.iter().map(|g| format!("{g}\n")).collect();
    write(&out.join("curve_gates.txt"), report)?;
    Ok(gates)
}

/// Runs the gradient audit and writes `gradcheck.txt`.
pub fn cmd_gradcheck(options: AuditOptions, out: &Path) -> Result<AuditReport> {
    let report = run_audit(options)?;
    create_dir(out)?;
    write(&out.join("gradcheck.txt"), report.render())?;
    Ok(report)
}
