//! Threshold selection, confusion metrics, ROC-AUC, and the
//! uncertainty-interval analysis performed on every validation fold.
//!
//! The decision rule everywhere is `score >= threshold => positive`: ties
//! classify positive, so thresholding at the minimum positive training
//! score keeps every training positive on the positive side.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a decision threshold came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    /// Minimum eval-mode score over the positive training instances.
    TrainMinPositive,
}

/// A decision threshold guaranteeing zero false negatives on the scores it
/// was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub threshold_zfn: f64,
    pub source: ThresholdSource,
}

/// Counts and rates of a thresholded binary classification.
///
/// `fn_` is the false-negative count (`fn` alone is a reserved word).
/// Rates with a zero denominator are reported as 0 with the matching
/// degenerate flag set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub fnr: f64,
    /// True when `tp + fn = 0`, i.e. the split held no positives.
    pub no_positive_instances: bool,
    /// True when `fp + tn = 0`, i.e. the split held no negatives.
    pub no_negative_instances: bool,
}

/// Validation-set review band `[lower_bound, threshold)` together with the
/// cost of manually checking it.
///
/// Instances scoring inside the half-open interval are classified negative
/// but flagged for review; instances at exactly the threshold are already
/// classified positive and need no check. Flagged positives are exactly
/// the false negatives of the fold, so capture is 100% by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    /// Minimum positive score strictly below the threshold; equals the
    /// threshold itself (zero-width interval) when no positive falls below.
    pub lower_bound: f64,
    pub threshold: f64,
    /// `threshold - lower_bound`.
    pub width: f64,
    /// Fraction of all validation instances flagged for review.
    pub manual_checks_pct: f64,
    /// Fraction of all validation instances that are flagged positives.
    pub useful_checks_pct: f64,
    pub flagged: usize,
    pub flagged_positives: usize,
    pub total_instances: usize,
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            format!("{} labels", scores.len()),
            format!("{}", labels.len()),
        ));
    }
    for (i, &y) in labels.iter().enumerate() {
        if y > 1 {
            return Err(Error::ContractViolation(format!(
                "labels must be 0 or 1, got {y} at position {i}"
            )));
        }
    }
    Ok(())
}

/// Zero-false-negative threshold: the minimum of the positive training
/// scores. Classifying those same scores with `score >= threshold` yields
/// a true-positive rate of exactly 1.
pub fn zfn_threshold(train_positive_scores: &[f64]) -> Result<ThresholdResult> {
    if train_positive_scores.is_empty() {
        return Err(Error::ContractViolation(
            "threshold selection requires at least one positive training instance".into(),
        ));
    }
    let threshold_zfn = train_positive_scores
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(ThresholdResult {
        threshold_zfn,
        source: ThresholdSource::TrainMinPositive,
    })
}

/// Confusion counts and rates under the rule `score >= threshold =>
/// positive`.
pub fn confusion_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionMetrics> {
    check_lengths(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels.iter()) {
        let predicted_positive = s >= threshold;
        match (y, predicted_positive) {
            (1, true) => tp += 1,
            (1, false) => fn_ += 1,
            (0, true) => fp += 1,
            (0, false) => tn += 1,
            _ => unreachable!("labels validated"),
        }
    }
    let positives = tp + fn_;
    let negatives = fp + tn;
    let total = positives + negatives;
    let rate = |num: usize, den: usize| if den > 0 { num as f64 / den as f64 } else { 0.0 };
    Ok(ConfusionMetrics {
        tp,
        fp,
        tn,
        fn_,
        accuracy: rate(tp + tn, total),
        tpr: rate(tp, positives),
        fpr: rate(fp, negatives),
        fnr: if positives > 0 { 1.0 - rate(tp, positives) } else { 0.0 },
        no_positive_instances: positives == 0,
        no_negative_instances: negatives == 0,
    })
}

/// Wilcoxon–Mann–Whitney ROC-AUC: the fraction of positive/negative pairs
/// ranked correctly, ties counting one half. Computed from average ranks,
/// which equals direct pair enumeration exactly (both reduce to the same
/// half-integer numerator).
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let np = labels.iter().filter(|&&y| y == 1).count();
    let nn = labels.len() - np;
    if np == 0 || nn == 0 {
        return Err(Error::ContractViolation(
            "ROC-AUC requires both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .expect("scores must be comparable")
    });

    // positive-rank sum with average ranks over tie groups (1-based)
    let mut rank_sum_positives = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let average_rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            if labels[idx] == 1 {
                rank_sum_positives += average_rank;
            }
        }
        start = end;
    }

    let correct_pairs = rank_sum_positives - (np * (np + 1)) as f64 / 2.0;
    Ok(correct_pairs / (np as f64 * nn as f64))
}

/// Review band for a validation fold: `[lower_bound, threshold)` where
/// `lower_bound` is the worst (lowest) positive score below the threshold.
pub fn uncertainty_interval(
    val_scores: &[f64],
    val_labels: &[u8],
    threshold: f64,
) -> Result<UncertaintyReport> {
    check_lengths(val_scores, val_labels)?;
    let lower_bound = val_scores
        .iter()
        .zip(val_labels.iter())
        .filter(|&(&s, &y)| y == 1 && s < threshold)
        .map(|(&s, _)| s)
        .fold(f64::INFINITY, f64::min);
    let lower_bound = if lower_bound.is_finite() { lower_bound } else { threshold };

    let total = val_scores.len();
    let mut flagged = 0usize;
    let mut flagged_positives = 0usize;
    for (&s, &y) in val_scores.iter().zip(val_labels.iter()) {
        if lower_bound <= s && s < threshold {
            flagged += 1;
            if y == 1 {
                flagged_positives += 1;
            }
        }
    }
    let pct = |count: usize| if total > 0 { count as f64 / total as f64 } else { 0.0 };
    Ok(UncertaintyReport {
        lower_bound,
        threshold,
        width: threshold - lower_bound,
        manual_checks_pct: pct(flagged),
        useful_checks_pct: pct(flagged_positives),
        flagged,
        flagged_positives,
        total_instances: total,
    })
}
