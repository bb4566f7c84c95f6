//! Datasets: synthetic Gaussian clusters, IDX ingestion, label noise,
//! long-tail resampling and seeded minibatching.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// `[n × dim]`, row-major.
    pub features: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        classes: usize,
        split: Split,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("dataset has no samples".into()));
        }
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {l} outside [0, {classes})"
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "feature value at flat index {i} is not finite"
            )));
        }
        Ok(LabeledDataset {
            features,
            dim,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Same samples with a larger declared class count.
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        if classes < self.classes {
            return Err(Error::InvalidArgument(format!(
                "cannot shrink {} classes to {classes}",
                self.classes
            )));
        }
        self.classes = classes;
        Ok(self)
    }

    fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        LabeledDataset {
            features,
            dim: self.dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: self.split,
        }
    }

    /// All samples as a `[n × dim]` matrix.
    pub fn feature_matrix(&self) -> Matrix {
        Matrix {
            rows: self.len(),
            cols: self.dim,
            data: self.features.clone(),
        }
    }

    /// CSV with header `f0..f{d-1},label`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.dim {
            let _ = write!(out, "f{j},");
        }
        out.push_str("label\n");
        for i in 0..self.len() {
            for v in self.row(i) {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{}", self.labels[i]);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// One isotropic Gaussian class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub mean: Vec<f64>,
    pub std: f64,
    pub samples: usize,
}

pub fn gaussian_clusters(specs: &[ClusterSpec], seed: u64, split: Split) -> Result<LabeledDataset> {
    if specs.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    let dim = specs[0].mean.len();
    for (k, s) in specs.iter().enumerate() {
        if s.mean.len() != dim || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "class {k} mean has dimension {}, expected {dim}",
                s.mean.len()
            )));
        }
        if !(s.std > 0.0 && s.std.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "class {k} std must be positive, got {}",
                s.std
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (k, s) in specs.iter().enumerate() {
        for _ in 0..s.samples {
            for m in &s.mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(m + s.std * z);
            }
            labels.push(k);
        }
    }
    LabeledDataset::new(features, dim, labels, specs.len(), split)
}

/// Parameters of the overlapping-pairs preset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlappingPairs {
    pub classes: usize,
    pub dim: usize,
    /// Distance between the two means of each designated pair.
    pub gap: f64,
    pub tight_std: f64,
    pub loose_std: f64,
    /// Radius on which the pair centers sit.
    pub radius: f64,
}

impl Default for OverlappingPairs {
    fn default() -> Self {
        OverlappingPairs {
            classes: 10,
            dim: 2,
            gap: 0.8,
            tight_std: 0.4,
            loose_std: 0.8,
            radius: 4.0,
        }
    }
}

impl OverlappingPairs {
    /// Classes `2k` and `2k+1` share a center on a circle in the first two
    /// coordinates, offset by `±gap/2` along the tangent; even classes use
    /// `tight_std`, odd classes `loose_std`. An odd final class sits alone.
    pub fn specs(&self, samples_per_class: usize) -> Result<Vec<ClusterSpec>> {
        if self.classes < 2 || self.dim < 2 {
            return Err(Error::InvalidArgument(
                "overlapping-pairs needs at least 2 classes and 2 dimensions".into(),
            ));
        }
        let centers = self.classes.div_ceil(2);
        let mut specs = Vec::with_capacity(self.classes);
        for k in 0..self.classes {
            let pair = k / 2;
            let angle = 2.0 * std::f64::consts::PI * pair as f64 / centers as f64;
            let (sin, cos) = angle.sin_cos();
            let paired = pair * 2 + 1 < self.classes;
            let offset = if !paired {
                0.0
            } else if k % 2 == 0 {
                self.gap / 2.0
            } else {
                -self.gap / 2.0
            };
            let mut mean = vec![0.0; self.dim];
            mean[0] = self.radius * cos - offset * sin;
            mean[1] = self.radius * sin + offset * cos;
            specs.push(ClusterSpec {
                mean,
                std: if k % 2 == 0 { self.tight_std } else { self.loose_std },
                samples: samples_per_class,
            });
        }
        Ok(specs)
    }

    pub fn generate(&self, samples_per_class: usize, seed: u64, split: Split) -> Result<LabeledDataset> {
        gaussian_clusters(&self.specs(samples_per_class)?, seed, split)
    }
}

/// Two well separated classes at `(±10, 0, …)` with std 0.1.
pub fn separated_specs(dim: usize, samples_per_class: usize) -> Vec<ClusterSpec> {
    [-10.0, 10.0]
        .into_iter()
        .map(|x| {
            let mut mean = vec![0.0; dim.max(1)];
            mean[0] = x;
            ClusterSpec {
                mean,
                std: 0.1,
                samples: samples_per_class,
            }
        })
        .collect()
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format {
            offset,
            message: "truncated header".into(),
        })
}

/// Parses in-memory IDX image and label files.
pub fn parse_idx(images: &[u8], labels: &[u8], split: Split) -> Result<LabeledDataset> {
    let magic = read_be_u32(images, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_be_u32(images, 4)? as usize;
    let rows = read_be_u32(images, 8)? as usize;
    let cols = read_be_u32(images, 12)? as usize;
    let dim = rows * cols;
    let pixels = &images[16..];
    if pixels.len() < n * dim {
        return Err(Error::Format {
            offset: 16 + pixels.len(),
            message: format!("image data truncated: need {} bytes, have {}", n * dim, pixels.len()),
        });
    }

    let magic = read_be_u32(labels, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let m = read_be_u32(labels, 4)? as usize;
    if m != n {
        return Err(Error::Format {
            offset: 4,
            message: format!("label count {m} does not match image count {n}"),
        });
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < n {
        return Err(Error::Format {
            offset: 8 + label_bytes.len(),
            message: format!("label data truncated: need {n} bytes, have {}", label_bytes.len()),
        });
    }
    let labels: Vec<usize> = label_bytes[..n].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let features = pixels[..n * dim].iter().map(|&b| b as f64 / 255.0).collect();
    LabeledDataset::new(features, dim, labels, classes, split)
}

pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<LabeledDataset> {
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    parse_idx(&images, &labels, split)
}

/// Serializes `(images, labels)` in IDX form; pixels are `[n × rows·cols]`.
pub fn write_idx(pixels: &[u8], labels: &[u8], rows: usize, cols: usize) -> (Vec<u8>, Vec<u8>) {
    let n = labels.len();
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}

/// A noisy copy of a dataset plus the corrupted indices (ascending).
#[derive(Debug, Clone)]
pub struct NoisyLabels {
    pub dataset: LabeledDataset,
    pub corrupted: Vec<usize>,
}

/// Number of labels flipped at `rate` out of `n`.
pub fn noise_count(rate: f64, n: usize) -> usize {
    // Guard against products like 0.29 * 100 = 28.999999999999996.
    ((rate * n as f64) + 1e-9).floor() as usize
}

/// Flips `⌊rate·n⌋` labels, chosen without replacement, each to a uniformly
/// drawn different class.
pub fn inject_label_noise(ds: &LabeledDataset, rate: f64, seed: u64) -> Result<NoisyLabels> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("noise rate {rate} outside [0, 1]")));
    }
    if ds.classes < 2 {
        return Err(Error::InvalidArgument("label noise needs at least 2 classes".into()));
    }
    let n = ds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corrupted = index::sample(&mut rng, n, noise_count(rate, n).min(n)).into_vec();
    corrupted.sort_unstable();
    let mut out = ds.clone();
    for &i in &corrupted {
        let old = out.labels[i];
        let r = rng.random_range(0..ds.classes - 1);
        out.labels[i] = if r >= old { r + 1 } else { r };
    }
    Ok(NoisyLabels {
        dataset: out,
        corrupted,
    })
}

/// Keeps `⌈n_k · imbalance^(−k/(c−1))⌉` samples of class `k` (seeded choice,
/// original order preserved).
pub fn longtail_resample(ds: &LabeledDataset, imbalance: f64, seed: u64) -> Result<LabeledDataset> {
    if !(imbalance >= 1.0 && imbalance.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "imbalance must be at least 1, got {imbalance}"
        )));
    }
    let c = ds.classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = BTreeSet::new();
    for k in 0..c {
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == k).collect();
        let exponent = if c > 1 { -(k as f64) / (c - 1) as f64 } else { 0.0 };
        let target = (members.len() as f64 * imbalance.powf(exponent) - 1e-9).ceil() as usize;
        if target == 0 {
            return Err(Error::InvalidArgument(format!(
                "long-tail resampling empties class {k}"
            )));
        }
        for j in index::sample(&mut rng, members.len(), target.min(members.len())) {
            keep.insert(members[j]);
        }
    }
    let indices: Vec<usize> = keep.into_iter().collect();
    Ok(ds.subset(&indices))
}

/// Per-dimension affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Statistics of `ds`; constant dimensions keep unit scale.
    pub fn fit(ds: &LabeledDataset) -> Self {
        let n = ds.len() as f64;
        let mut mean = vec![0.0; ds.dim];
        for i in 0..ds.len() {
            for (m, v) in mean.iter_mut().zip(ds.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; ds.dim];
        for i in 0..ds.len() {
            for ((s, v), m) in var.iter_mut().zip(ds.row(i)).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, ds: &LabeledDataset) -> LabeledDataset {
        let mut out = ds.clone();
        for row in out.features.chunks_exact_mut(ds.dim) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Shuffled minibatches for one epoch; the final short batch is kept.
pub fn batches(ds: &LabeledDataset, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch)));
    Ok(order
        .chunks(batch_size)
        .map(|idx| {
            let sub = ds.subset(idx);
            Batch {
                features: Matrix {
                    rows: idx.len(),
                    cols: ds.dim,
                    data: sub.features,
                },
                labels: sub.labels,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn small(n_per: usize, c: usize) -> LabeledDataset {
        OverlappingPairs {
            classes: c,
            ..OverlappingPairs::default()
        }
        .generate(n_per, 1, Split::Train)
        .unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let a = small(20, 10);
        let b = small(20, 10);
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.class_counts(), vec![20; 10]);
    }

    #[test]
    fn separated_clusters_are_linearly_separable() {
        let ds = gaussian_clusters(&separated_specs(2, 100), 3, Split::Train).unwrap();
        // The x = 0 hyperplane splits them perfectly.
        for i in 0..ds.len() {
            assert_eq!(ds.row(i)[0] > 0.0, ds.labels[i] == 1);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = vec![
            ClusterSpec { mean: vec![0.0], std: 1.0, samples: 2 },
            ClusterSpec { mean: vec![1.0], std: 0.0, samples: 2 },
        ];
        assert!(gaussian_clusters(&bad, 0, Split::Train).is_err());
        assert!(gaussian_clusters(&bad[..1], 0, Split::Train).is_err());
    }

    #[test]
    fn overlapping_pair_bayes_error() {
        // Monte-Carlo with the generating densities: a pair separated by
        // 0.5·std at equal std, classified by the likelihood ratio.
        let std = 1.0;
        let pair = OverlappingPairs {
            classes: 2,
            dim: 2,
            gap: 0.5 * std,
            tight_std: std,
            loose_std: std,
            radius: 4.0,
        };
        let specs = pair.specs(20_000).unwrap();
        let ds = gaussian_clusters(&specs, 5, Split::Train).unwrap();
        let log_density = |x: &[f64], s: &ClusterSpec| -> f64 {
            let d2: f64 = x.iter().zip(&s.mean).map(|(a, b)| (a - b).powi(2)).sum();
            -d2 / (2.0 * s.std * s.std) - x.len() as f64 * s.std.ln()
        };
        let errors = (0..ds.len())
            .filter(|&i| {
                let x = ds.row(i);
                let pred = usize::from(log_density(x, &specs[1]) > log_density(x, &specs[0]));
                pred != ds.labels[i]
            })
            .count();
        let bayes = errors as f64 / ds.len() as f64;
        assert!(bayes >= 0.05, "{bayes}");
    }

    #[test]
    fn idx_fixture() {
        let (img, lab) = write_idx(&[0, 255], &[3, 9], 1, 1);
        let ds = parse_idx(&img, &lab, Split::Train).unwrap();
        assert_eq!(ds.features, vec![0.0, 1.0]);
        assert_eq!(ds.labels, vec![3, 9]);
        assert_eq!(ds.classes, 10);
    }

    #[test]
    fn idx_errors_name_offsets() {
        let (mut img, lab) = write_idx(&[1, 2, 3, 4], &[0, 1], 1, 2);
        let (_, short_lab) = write_idx(&[], &[0], 1, 2);
        assert!(matches!(
            parse_idx(&img, &short_lab, Split::Train),
            Err(Error::Format { offset: 4, .. })
        ));
        img.truncate(18);
        assert!(matches!(
            parse_idx(&img, &lab, Split::Train),
            Err(Error::Format { offset: 18, .. })
        ));
        let (mut img, lab) = write_idx(&[1, 2], &[0, 1], 1, 1);
        img[3] = 0x01;
        assert!(matches!(
            parse_idx(&img, &lab, Split::Train),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(parse_idx(&[0, 0], &lab, Split::Train).is_err());
    }

    #[test]
    fn noise_rates() {
        let ds = small(100, 10);
        let same = inject_label_noise(&ds, 0.0, 3).unwrap();
        assert_eq!(same.dataset, ds);
        assert!(same.corrupted.is_empty());

        let noisy = inject_label_noise(&ds, 0.2, 3).unwrap();
        let changed = ds
            .labels
            .iter()
            .zip(&noisy.dataset.labels)
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, 200);
        assert_eq!(noisy.corrupted.len(), 200);

        let two = small(50, 2);
        let flipped = inject_label_noise(&two, 1.0, 9).unwrap();
        assert!(two.labels.iter().zip(&flipped.dataset.labels).all(|(a, b)| a != b));
        assert!(inject_label_noise(&two, 1.5, 9).is_err());
        assert_eq!(noise_count(0.29, 100), 29);
    }

    #[test]
    fn longtail_profiles() {
        let ds = small(100, 2);
        assert_eq!(longtail_resample(&ds, 1.0, 0).unwrap(), ds);
        assert_eq!(longtail_resample(&ds, 10.0, 0).unwrap().class_counts(), vec![100, 10]);

        let ds = small(100, 10);
        let lt = longtail_resample(&ds, 100.0, 0).unwrap();
        let counts = lt.class_counts();
        assert_eq!(counts[0], 100);
        assert_eq!(counts[9], 1);
        assert!(counts.windows(2).all(|w| w[0] >= w[1]));
        assert!(longtail_resample(&ds, 0.5, 0).is_err());
    }

    #[test]
    fn longtail_cannot_empty_a_class() {
        let ds = LabeledDataset::new(vec![0.0, 1.0], 1, vec![0, 1], 3, Split::Train).unwrap();
        assert!(longtail_resample(&ds, 2.0, 0).is_err());
    }

    #[test]
    fn standardizer_centers_train_split() {
        let ds = small(50, 4);
        let st = Standardizer::fit(&ds);
        let out = Standardizer::fit(&st.apply(&ds));
        for (m, s) in out.mean.iter().zip(&out.std) {
            assert!(m.abs() < 1e-12);
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_sizes_and_determinism() {
        let ds = LabeledDataset::new((0..10).map(f64::from).collect(), 1, vec![0; 10], 2, Split::Train)
            .unwrap();
        let b = batches(&ds, 3, 5, 0).unwrap();
        assert_eq!(b.iter().map(|x| x.labels.len()).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        assert_eq!(b, batches(&ds, 3, 5, 0).unwrap());
        assert_ne!(b, batches(&ds, 3, 5, 1).unwrap());
        assert!(batches(&ds, 0, 5, 0).is_err());
    }

    proptest! {
        #[test]
        fn batches_partition_dataset(n in 1usize..60, bs in 1usize..17, seed in 0u64..1000, epoch in 0usize..5) {
            let ds = LabeledDataset::new((0..n).map(|i| i as f64).collect(), 1, vec![0; n], 2, Split::Train).unwrap();
            let mut seen: Vec<usize> = batches(&ds, bs, seed, epoch)
                .unwrap()
                .iter()
                .flat_map(|b| b.features.data.iter().map(|v| *v as usize).collect::<Vec<_>>())
                .collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn noise_never_maps_to_self(rate in 0.0f64..=1.0, seed in 0u64..500, c in 2usize..6) {
            let n = 40;
            let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
            let ds = LabeledDataset::new(vec![0.0; n], 1, labels, c, Split::Train).unwrap();
            let noisy = inject_label_noise(&ds, rate, seed).unwrap();
            prop_assert_eq!(noisy.corrupted.len(), noise_count(rate, n));
            for &i in &noisy.corrupted {
                prop_assert_ne!(noisy.dataset.labels[i], ds.labels[i]);
            }
            prop_assert_eq!(noisy.dataset.labels.iter().zip(&ds.labels).filter(|(a, b)| a != b).count(), noisy.corrupted.len());
        }

        #[test]
        fn idx_round_trip(n in 1usize..6, rows in 1usize..4, cols in 1usize..4, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pixels: Vec<u8> = (0..n * rows * cols).map(|_| rng.random()).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..10)).collect();
            let (img, lab) = write_idx(&pixels, &labels, rows, cols);
            let ds = parse_idx(&img, &lab, Split::Train).unwrap();
            prop_assert_eq!(ds.dim, rows * cols);
            let back: Vec<u8> = ds.features.iter().map(|v| (v * 255.0).round() as u8).collect();
            prop_assert_eq!(back, pixels);
            prop_assert_eq!(ds.labels, labels.iter().map(|&l| l as usize).collect::<Vec<_>>());
        }
    }
}
