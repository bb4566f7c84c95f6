//! Minibatch SGD training and per-epoch run records.

mod metrics;

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::data::{batches, LabeledDataset};
use crate::error::{Error, Result};
use crate::losses::{LossParts, Objective};
use crate::model::{backward, forward, Matrix, MlpParams};
use crate::simplex::{argmax, softmax_slice, LogitVector};

pub use metrics::{expected_calibration_error, topk_accuracy, DEFAULT_ECE_BINS};

/// Losses above this are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// SGD with classical momentum: `v ← μv + G`, `θ ← θ − αv`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub velocity: Vec<f64>,
    pub alpha: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimState {
    pub fn new(len: usize, alpha: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {alpha} must be positive")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum {momentum} outside [0, 1)")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight decay {weight_decay} must be non-negative"
            )));
        }
        Ok(OptimState {
            velocity: vec![0.0; len],
            alpha,
            momentum,
            weight_decay,
        })
    }

    /// One update of `theta` in place. Weight decay is added to the gradient.
    pub fn sgd_step(&mut self, theta: &mut [f64], grads: &[f64]) -> Result<()> {
        if theta.len() != self.velocity.len() || grads.len() != theta.len() {
            return Err(Error::InvalidArgument(format!(
                "shape mismatch: theta {}, grads {}, velocity {}",
                theta.len(),
                grads.len(),
                self.velocity.len()
            )));
        }
        for ((t, &g), v) in theta.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            let g = g + self.weight_decay * *t;
            *v = self.momentum * *v + g;
            *t -= self.alpha * *v;
        }
        Ok(())
    }
}

/// `α(epoch) = α₀ · factor^⌊epoch / drop_every⌋`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecay {
    pub alpha0: f64,
    pub drop_every: usize,
    pub factor: f64,
}

impl StepDecay {
    pub fn new(alpha0: f64, drop_every: usize, factor: f64) -> Result<Self> {
        if drop_every == 0 {
            return Err(Error::InvalidArgument("drop_every must be at least 1".into()));
        }
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::InvalidArgument(format!("decay factor {factor} outside (0, 1]")));
        }
        Ok(StepDecay {
            alpha0,
            drop_every,
            factor,
        })
    }

    /// A schedule that never drops.
    pub fn constant(alpha0: f64) -> Self {
        StepDecay {
            alpha0,
            drop_every: usize::MAX,
            factor: 1.0,
        }
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        self.alpha0 * self.factor.powi((epoch / self.drop_every) as i32)
    }
}

/// Everything [`train`] needs beyond the data and the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub hidden: Vec<usize>,
    pub objective: Objective,
    pub schedule: StepDecay,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub ece_bins: usize,
    pub topk: usize,
}

impl TrainSpec {
    pub fn layer_sizes(&self, input: usize, classes: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(classes);
        sizes
    }
}

/// Metrics logged after each completed epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_ce_part: f64,
    pub train_adr_part: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc_top1: f64,
    pub val_acc_topk: f64,
    pub ece: f64,
    /// Mean max-probability over the training set after the epoch.
    pub train_conf: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,train_ce_part,train_adr_part,train_acc,val_loss,val_acc_top1,val_acc_topk,ece,train_conf";

impl EpochRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.train_ce_part,
            self.train_adr_part,
            self.train_acc,
            self.val_loss,
            self.val_acc_top1,
            self.val_acc_topk,
            self.ece,
            self.train_conf
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize, loss: f64 },
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub seed: u64,
    pub rows: Vec<EpochRow>,
    pub status: RunStatus,
    pub params: MlpParams,
    /// Not persisted, so that re-runs stay byte-identical.
    pub wall_time: Duration,
}

impl RunRecord {
    pub fn final_row(&self) -> Option<&EpochRow> {
        self.rows.last()
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::with_capacity(128 * (self.rows.len() + 1));
        out.push_str(METRICS_HEADER);
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.csv_line());
        }
        out
    }
}

/// Summed objective over a set of rows.
#[derive(Debug, Default, Clone, Copy)]
struct Totals {
    value: f64,
    parts: LossParts,
    hits: usize,
    count: usize,
}

impl Totals {
    fn mean(&self, x: f64) -> f64 {
        x / self.count as f64
    }
}

/// Per-row objective values and the batch-mean logit gradient.
fn batch_objective(
    objective: &Objective,
    logits: &Matrix,
    labels: &[usize],
) -> Result<(Totals, Matrix)> {
    let b = labels.len() as f64;
    let mut totals = Totals::default();
    let mut dlogits = Matrix::zeros(logits.rows, logits.cols);
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let out = objective.eval(&LogitVector::new(row.to_vec())?, label)?;
        totals.value += out.value;
        totals.parts.ce_part += out.parts.ce_part;
        totals.parts.adr_part += out.parts.adr_part;
        totals.parts.entropy_part += out.parts.entropy_part;
        totals.hits += usize::from(argmax(row).0 == label);
        totals.count += 1;
        for (d, g) in dlogits.row_mut(r).iter_mut().zip(&out.grad) {
            *d = g / b;
        }
    }
    Ok((totals, dlogits))
}

fn diverged(loss: f64) -> bool {
    !loss.is_finite() || loss > DIVERGENCE_LIMIT
}

/// Deterministic training run: identical inputs and seed give an identical
/// record.
pub fn train(
    spec: &TrainSpec,
    train_set: &LabeledDataset,
    val_set: &LabeledDataset,
    seed: u64,
) -> Result<RunRecord> {
    let started = Instant::now();
    if train_set.dim != val_set.dim || train_set.classes != val_set.classes {
        return Err(Error::ShapeMismatch(format!(
            "train set is {}-d with {} classes, validation {}-d with {}",
            train_set.dim, train_set.classes, val_set.dim, val_set.classes
        )));
    }
    let classes = train_set.classes;
    spec.objective.validate(classes)?;
    if spec.topk == 0 || spec.topk > classes {
        return Err(Error::InvalidArgument(format!(
            "top-k = {} outside [1, {classes}]",
            spec.topk
        )));
    }
    let sizes = spec.layer_sizes(train_set.dim, classes);
    let mut params = MlpParams::init(&sizes, seed)?;
    let mut optim = OptimState::new(
        params.theta.len(),
        spec.schedule.rate(0),
        spec.momentum,
        spec.weight_decay,
    )?;
    let mut rows = Vec::with_capacity(spec.epochs);
    let mut status = RunStatus::Completed;

    'epochs: for epoch in 0..spec.epochs {
        optim.alpha = spec.schedule.rate(epoch);
        let mut totals = Totals::default();
        for batch in batches(train_set, spec.batch_size, seed, epoch)? {
            let (logits, cache) = forward(&params, &batch.features)?;
            if logits.data.iter().any(|v| !v.is_finite()) {
                status = RunStatus::Diverged {
                    epoch,
                    loss: f64::INFINITY,
                };
                break 'epochs;
            }
            let (bt, dlogits) = batch_objective(&spec.objective, &logits, &batch.labels)?;
            let batch_loss = bt.mean(bt.value);
            if diverged(batch_loss) {
                status = RunStatus::Diverged {
                    epoch,
                    loss: batch_loss,
                };
                break 'epochs;
            }
            let grads = backward(&params, &cache, &dlogits)?;
            optim.sgd_step(&mut params.theta, &grads)?;
            totals.value += bt.value;
            totals.parts.ce_part += bt.parts.ce_part;
            totals.parts.adr_part += bt.parts.adr_part;
            totals.hits += bt.hits;
            totals.count += bt.count;
        }

        if params.theta.iter().any(|v| !v.is_finite()) {
            status = RunStatus::Diverged {
                epoch,
                loss: f64::INFINITY,
            };
            break;
        }
        let val = evaluate(&params, &spec.objective, val_set, spec.topk, spec.ece_bins)?;
        let train_eval = evaluate(&params, &spec.objective, train_set, 1, spec.ece_bins)?;
        if diverged(val.loss) {
            status = RunStatus::Diverged {
                epoch,
                loss: val.loss,
            };
            break;
        }
        rows.push(EpochRow {
            epoch,
            train_loss: totals.mean(totals.value),
            train_ce_part: totals.mean(totals.parts.ce_part),
            train_adr_part: totals.mean(totals.parts.adr_part),
            train_acc: totals.hits as f64 / totals.count as f64,
            val_loss: val.loss,
            val_acc_top1: val.top1,
            val_acc_topk: val.topk,
            ece: val.ece,
            train_conf: train_eval.mean_confidence,
        });
    }

    Ok(RunRecord {
        seed,
        rows,
        status,
        params,
        wall_time: started.elapsed(),
    })
}

/// Metrics of a parameter snapshot on a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub top1: f64,
    pub topk: f64,
    pub ece: f64,
    pub mean_confidence: f64,
}

pub fn evaluate(
    params: &MlpParams,
    objective: &Objective,
    ds: &LabeledDataset,
    k: usize,
    ece_bins: usize,
) -> Result<Evaluation> {
    let (logits, _) = forward(params, &ds.feature_matrix())?;
    let (totals, _) = batch_objective(objective, &logits, &ds.labels)?;
    let mut conf = Vec::with_capacity(ds.len());
    let mut correct = Vec::with_capacity(ds.len());
    for (r, &label) in ds.labels.iter().enumerate() {
        let p = softmax_slice(logits.row(r));
        let (pred, c) = argmax(&p);
        conf.push(c.min(1.0));
        correct.push(pred == label);
    }
    Ok(Evaluation {
        loss: totals.mean(totals.value),
        top1: topk_accuracy(&logits, &ds.labels, 1)?,
        topk: topk_accuracy(&logits, &ds.labels, k)?,
        ece: expected_calibration_error(&conf, &correct, ece_bins)?,
        mean_confidence: conf.iter().sum::<f64>() / conf.len() as f64,
    })
}
