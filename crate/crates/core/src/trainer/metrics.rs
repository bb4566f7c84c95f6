//! Evaluation metrics. All functions are pure.

use crate::error::{Error, Result};
use crate::model::Matrix;

pub const DEFAULT_ECE_BINS: usize = 15;

/// Fraction of rows whose label ranks among the `k` largest logits.
/// Ties rank the lower class index first.
pub fn topk_accuracy(logits: &Matrix, labels: &[usize], k: usize) -> Result<f64> {
    if k == 0 || k > logits.cols {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside [1, {}]",
            logits.cols
        )));
    }
    if labels.len() != logits.rows || labels.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            logits.rows
        )));
    }
    let mut hits = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let target = row[label];
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > target || (v == target && j < label))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Equal-width binned ECE: `Σ_b (n_b/n)·|acc_b − conf_b|`. A confidence of
/// exactly 1 falls in the last bin.
pub fn expected_calibration_error(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::InvalidArgument("ECE needs at least one bin".into()));
    }
    if confidences.len() != correct.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} confidences for {} outcomes",
            confidences.len(),
            correct.len()
        )));
    }
    if confidences.is_empty() {
        return Ok(0.0);
    }
    let mut conf_sum = vec![0.0; bins];
    let mut hit_sum = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::InvalidArgument(format!("confidence {c} outside [0, 1]")));
        }
        let b = ((c * bins as f64) as usize).min(bins - 1);
        conf_sum[b] += c;
        hit_sum[b] += usize::from(ok);
        count[b] += 1;
    }
    let n = confidences.len() as f64;
    let ece = (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            (nb / n) * (hit_sum[b] as f64 / nb - conf_sum[b] / nb).abs()
        })
        .sum();
    Ok(ece)
}
