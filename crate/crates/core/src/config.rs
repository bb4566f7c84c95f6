//! Experiment configuration: TOML in, validated [`TrainSpec`] and datasets out.
//!
//! Every section is optional and falls back to the defaults below. Unknown
//! keys are rejected.
//!
//! ```
//! use adr::config::ExperimentConfig;
//!
//! let cfg = ExperimentConfig::from_toml_str(
//!     "[loss]\nkind = \"ce+adr\"\ngamma = 0.1\n\n[run]\nseeds = [3, 4]\nepochs = 5\n",
//! )
//! .unwrap();
//! assert_eq!(cfg.run.seeds, vec![3, 4]);
//! assert!(ExperimentConfig::from_toml_str("[loss]\ngama = 0.1\n").is_err());
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    gaussian_clusters, inject_label_noise, load_idx, longtail_resample, separated_specs,
    LabeledDataset, OverlappingPairs, Split, Standardizer,
};
use crate::error::{Error, Result};
use crate::losses::{AdrHyper, EntropyHyper, LossKind, Objective};
use crate::simplex::PhiKind;
use crate::trainer::{StepDecay, TrainSpec, DEFAULT_ECE_BINS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    OverlappingPairs,
    Separated,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub classes: usize,
    pub dim: usize,
    pub gap: f64,
    pub tight_std: f64,
    pub loose_std: f64,
    pub radius: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub val_images: Option<PathBuf>,
    pub val_labels: Option<PathBuf>,
    /// Fraction of training labels flipped before training.
    pub noise_rate: f64,
    /// Long-tail imbalance factor applied to the training split; 1 disables it.
    pub imbalance: f64,
    pub standardize: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let pairs = OverlappingPairs::default();
        DatasetConfig {
            kind: DatasetKind::OverlappingPairs,
            classes: pairs.classes,
            dim: pairs.dim,
            gap: pairs.gap,
            tight_std: pairs.tight_std,
            loose_std: pairs.loose_std,
            radius: pairs.radius,
            train_per_class: 100,
            val_per_class: 100,
            train_images: None,
            train_labels: None,
            val_images: None,
            val_labels: None,
            noise_rate: 0.0,
            imbalance: 1.0,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: vec![64] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub gamma: f64,
    /// Defaults to `max(2, round(0.3 c))`.
    pub tau: Option<usize>,
    pub phi: PhiKind,
    pub lambda: f64,
    pub eps_ls: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Ce,
            gamma: AdrHyper::DEFAULT_GAMMA,
            tau: None,
            phi: PhiKind::Entropy,
            lambda: 0.1,
            eps_ls: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Step-decay period in epochs; absent means a constant rate.
    pub lr_drop_every: Option<usize>,
    pub lr_drop_factor: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 64,
            lr_drop_every: None,
            lr_drop_factor: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub ece_bins: usize,
    /// Capped at the class count.
    pub topk: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epochs: 100,
            seeds: vec![0, 1, 2, 3, 4],
            out: PathBuf::from("out"),
            ece_bins: DEFAULT_ECE_BINS,
            topk: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub run: RunConfig,
}

/// Training and validation splits ready for [`crate::trainer::train`].
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    /// Indices of the flipped training labels.
    pub corrupted: Vec<usize>,
}

/// Sub-seeds so that each random stage of a run draws an independent stream.
fn stage_seed(seed: u64, stage: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stage.wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Pretty JSON snapshot of the resolved config.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Class count implied by the dataset section. For IDX data this is only
    /// known after loading, so `None`.
    pub fn declared_classes(&self) -> Option<usize> {
        match self.dataset.kind {
            DatasetKind::OverlappingPairs => Some(self.dataset.classes),
            DatasetKind::Separated => Some(2),
            DatasetKind::Idx => None,
        }
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        match d.kind {
            DatasetKind::OverlappingPairs => {
                if d.classes < 2 {
                    return Err(Error::Config(format!("dataset.classes = {} < 2", d.classes)));
                }
                if d.dim < 2 {
                    return Err(Error::Config(format!(
                        "overlapping-pairs needs dataset.dim >= 2, got {}",
                        d.dim
                    )));
                }
                positive("dataset.tight_std", d.tight_std)?;
                positive("dataset.loose_std", d.loose_std)?;
                positive("dataset.radius", d.radius)?;
                if !(d.gap.is_finite() && d.gap >= 0.0) {
                    return Err(Error::Config(format!("dataset.gap = {} invalid", d.gap)));
                }
            }
            DatasetKind::Separated => {
                if d.dim < 1 {
                    return Err(Error::Config("dataset.dim must be at least 1".into()));
                }
            }
            DatasetKind::Idx => {
                let paths = [
                    ("dataset.train_images", &d.train_images),
                    ("dataset.train_labels", &d.train_labels),
                    ("dataset.val_images", &d.val_images),
                    ("dataset.val_labels", &d.val_labels),
                ];
                for (name, path) in paths {
                    match path {
                        None => return Err(Error::Config(format!("{name} is required for idx data"))),
                        Some(p) if !p.is_file() => {
                            return Err(Error::Config(format!(
                                "{name}: {} does not exist",
                                p.display()
                            )))
                        }
                        Some(_) => {}
                    }
                }
            }
        }
        if d.kind != DatasetKind::Idx && (d.train_per_class == 0 || d.val_per_class == 0) {
            return Err(Error::Config("samples per class must be positive".into()));
        }
        if !(0.0..=1.0).contains(&d.noise_rate) {
            return Err(Error::Config(format!(
                "dataset.noise_rate = {} outside [0, 1]",
                d.noise_rate
            )));
        }
        if !(d.imbalance.is_finite() && d.imbalance >= 1.0) {
            return Err(Error::Config(format!(
                "dataset.imbalance = {} must be at least 1",
                d.imbalance
            )));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::Config("model.hidden sizes must be positive".into()));
        }
        let l = &self.loss;
        if !(l.gamma.is_finite() && l.gamma >= 0.0) {
            return Err(Error::Config(format!("loss.gamma = {} invalid", l.gamma)));
        }
        if l.tau == Some(0) {
            return Err(Error::Config("loss.tau must be at least 1".into()));
        }
        if !(l.lambda.is_finite() && l.lambda >= 0.0) {
            return Err(Error::Config(format!("loss.lambda = {} invalid", l.lambda)));
        }
        if !(0.0..1.0).contains(&l.eps_ls) {
            return Err(Error::Config(format!("loss.eps_ls = {} outside [0, 1)", l.eps_ls)));
        }
        let o = &self.optim;
        positive("optim.lr", o.lr)?;
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(Error::Config(format!("optim.momentum = {} outside [0, 1)", o.momentum)));
        }
        if !(o.weight_decay.is_finite() && o.weight_decay >= 0.0) {
            return Err(Error::Config(format!("optim.weight_decay = {} invalid", o.weight_decay)));
        }
        if o.batch_size == 0 {
            return Err(Error::Config("optim.batch_size must be at least 1".into()));
        }
        if o.lr_drop_every == Some(0) {
            return Err(Error::Config("optim.lr_drop_every must be at least 1".into()));
        }
        if !(o.lr_drop_factor > 0.0 && o.lr_drop_factor <= 1.0) {
            return Err(Error::Config(format!(
                "optim.lr_drop_factor = {} outside (0, 1]",
                o.lr_drop_factor
            )));
        }
        let r = &self.run;
        if r.epochs == 0 {
            return Err(Error::Config("run.epochs must be at least 1".into()));
        }
        if r.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        if r.ece_bins == 0 {
            return Err(Error::Config("run.ece_bins must be at least 1".into()));
        }
        if r.topk == 0 {
            return Err(Error::Config("run.topk must be at least 1".into()));
        }
        if let Some(c) = self.declared_classes() {
            self.check_classes(c)?;
        }
        Ok(())
    }

    fn check_classes(&self, c: usize) -> Result<()> {
        if let Some(tau) = self.loss.tau {
            if tau > c {
                return Err(Error::Config(format!("loss.tau = {tau} exceeds {c} classes")));
            }
        }
        Ok(())
    }

    /// Trainer settings for a dataset with `classes` classes. `run.topk` is
    /// capped at `classes`.
    pub fn train_spec(&self, classes: usize) -> Result<TrainSpec> {
        let l = &self.loss;
        let tau = l.tau.unwrap_or_else(|| AdrHyper::default_tau(classes));
        if tau > classes {
            return Err(Error::Config(format!("loss.tau = {tau} exceeds {classes} classes")));
        }
        let objective = Objective {
            kind: l.kind,
            adr: AdrHyper::new(l.gamma, tau)?,
            phi_kind: l.phi,
            entropy: EntropyHyper::new(l.lambda)?,
            eps_ls: l.eps_ls,
        };
        objective.validate(classes)?;
        let o = &self.optim;
        let schedule = match o.lr_drop_every {
            Some(every) => StepDecay::new(o.lr, every, o.lr_drop_factor)?,
            None => StepDecay::constant(o.lr),
        };
        Ok(TrainSpec {
            hidden: self.model.hidden.clone(),
            objective,
            schedule,
            momentum: o.momentum,
            weight_decay: o.weight_decay,
            batch_size: o.batch_size,
            epochs: self.run.epochs,
            ece_bins: self.run.ece_bins,
            topk: self.run.topk.min(classes),
        })
    }

    /// Builds both splits for `seed`: generation or loading, long-tail
    /// resampling and label noise on the training split, then standardization
    /// with training statistics. Validation labels stay clean.
    pub fn prepare_data(&self, seed: u64) -> Result<PreparedData> {
        let d = &self.dataset;
        let (mut train, mut val) = match d.kind {
            DatasetKind::OverlappingPairs => {
                let pairs = OverlappingPairs {
                    classes: d.classes,
                    dim: d.dim,
                    gap: d.gap,
                    tight_std: d.tight_std,
                    loose_std: d.loose_std,
                    radius: d.radius,
                };
                (
                    pairs.generate(d.train_per_class, stage_seed(seed, 1), Split::Train)?,
                    pairs.generate(d.val_per_class, stage_seed(seed, 2), Split::Validation)?,
                )
            }
            DatasetKind::Separated => (
                gaussian_clusters(
                    &separated_specs(d.dim, d.train_per_class),
                    stage_seed(seed, 1),
                    Split::Train,
                )?,
                gaussian_clusters(
                    &separated_specs(d.dim, d.val_per_class),
                    stage_seed(seed, 2),
                    Split::Validation,
                )?,
            ),
            DatasetKind::Idx => {
                let need = |p: &Option<PathBuf>, name: &str| {
                    p.clone()
                        .ok_or_else(|| Error::Config(format!("{name} is required for idx data")))
                };
                let train = load_idx(
                    &need(&d.train_images, "dataset.train_images")?,
                    &need(&d.train_labels, "dataset.train_labels")?,
                    Split::Train,
                )?;
                let val = load_idx(
                    &need(&d.val_images, "dataset.val_images")?,
                    &need(&d.val_labels, "dataset.val_labels")?,
                    Split::Validation,
                )?;
                let classes = train.classes.max(val.classes);
                (train.with_classes(classes)?, val.with_classes(classes)?)
            }
        };
        self.check_classes(train.classes)?;
        if d.imbalance > 1.0 {
            train = longtail_resample(&train, d.imbalance, stage_seed(seed, 3))?;
        }
        let mut corrupted = Vec::new();
        if d.noise_rate > 0.0 {
            let noisy = inject_label_noise(&train, d.noise_rate, stage_seed(seed, 4))?;
            train = noisy.dataset;
            corrupted = noisy.corrupted;
        }
        if d.standardize {
            let st = Standardizer::fit(&train);
            train = st.apply(&train);
            val = st.apply(&val);
        }
        Ok(PreparedData {
            train,
            val,
            corrupted,
        })
    }
}

/// Parses `"0,1,2"` or `"0..5"` (half-open) into a seed list.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let s = s.trim();
    let bad = || Error::Config(format!("cannot parse seed list `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    let seeds = s
        .split(',')
        .map(|x| x.trim().parse::<u64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Parses a comma-separated list of reals.
pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("cannot parse `{x}` as a number")))
        })
        .collect()
}

/// Parses a comma-separated list of non-negative integers.
pub fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("cannot parse `{x}` as an integer")))
        })
        .collect()
}
