//! Per-training-fold preprocessing: constant-feature removal, greedy
//! correlated-feature removal, and min-max scaling.
//!
//! Everything here is fit on the training split alone and then applied to
//! both splits, so validation statistics never leak into the fit.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Default absolute Pearson-correlation cutoff above which the later of a
/// feature pair is dropped.
pub const DEFAULT_CORRELATION_CUTOFF: f64 = 0.95;

/// What preprocessing decided on a training split: which features were
/// dropped and the min-max parameters of the survivors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    /// Feature names of the dataset the report was fit on, in order.
    pub original_features: Vec<String>,
    /// Features whose training values were all identical.
    pub dropped_constant: Vec<String>,
    /// Features dropped by the greedy correlation scan (the later column of
    /// each offending pair).
    pub dropped_correlated: Vec<String>,
    /// Surviving features, in original column order.
    pub retained: Vec<String>,
    /// Training minima of the retained features.
    pub scale_min: Vec<f64>,
    /// Training maxima of the retained features.
    pub scale_max: Vec<f64>,
    pub correlation_cutoff: f64,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    let denom = (var_a * var_b).sqrt();
    if denom == 0.0 {
        // degenerate spread; treat as uncorrelated rather than dividing by 0
        0.0
    } else {
        cov / denom
    }
}

/// Fits the preprocessing chain on a training split.
///
/// Constant columns (all training values exactly equal) go first; then the
/// remaining columns are scanned in order and a column is dropped when its
/// absolute Pearson correlation with any earlier surviving column reaches
/// the cutoff. Min-max parameters are computed over the survivors.
pub fn fit_preprocess(train: &Dataset, correlation_cutoff: f64) -> Result<PreprocessReport> {
    if !(0.0..=1.0).contains(&correlation_cutoff) {
        return Err(Error::InvalidConfig(format!(
            "correlation cutoff must lie in [0,1], got {correlation_cutoff}"
        )));
    }
    if train.n() == 0 {
        return Err(Error::ContractViolation("empty training split".into()));
    }

    let columns: Vec<Vec<f64>> = (0..train.dim())
        .map(|j| train.features.column(j).to_vec())
        .collect();

    let mut dropped_constant = Vec::new();
    let mut candidates: Vec<usize> = Vec::new();
    for (j, column) in columns.iter().enumerate() {
        if column.iter().all(|&v| v == column[0]) {
            dropped_constant.push(train.feature_names[j].clone());
        } else {
            candidates.push(j);
        }
    }

    let mut dropped_correlated = Vec::new();
    let mut survivors: Vec<usize> = Vec::new();
    for &j in &candidates {
        let correlated = survivors
            .iter()
            .any(|&i| pearson(&columns[i], &columns[j]).abs() >= correlation_cutoff);
        if correlated {
            dropped_correlated.push(train.feature_names[j].clone());
        } else {
            survivors.push(j);
        }
    }

    if survivors.is_empty() {
        return Err(Error::ContractViolation(
            "preprocessing dropped every feature".into(),
        ));
    }

    let mut scale_min = Vec::with_capacity(survivors.len());
    let mut scale_max = Vec::with_capacity(survivors.len());
    for &j in &survivors {
        scale_min.push(columns[j].iter().copied().fold(f64::INFINITY, f64::min));
        scale_max.push(columns[j].iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }

    Ok(PreprocessReport {
        original_features: train.feature_names.clone(),
        dropped_constant,
        dropped_correlated,
        retained: survivors
            .iter()
            .map(|&j| train.feature_names[j].clone())
            .collect(),
        scale_min,
        scale_max,
        correlation_cutoff,
    })
}

/// Applies a fitted report: drops the same columns and rescales with the
/// training parameters, `(x - min) / (max - min)`. Columns that were
/// constant over the fit split map to 0; out-of-range values (possible on
/// validation data) are kept as-is, not clamped.
pub fn apply_preprocess(dataset: &Dataset, report: &PreprocessReport) -> Result<Dataset> {
    if dataset.feature_names != report.original_features {
        return Err(Error::ContractViolation(format!(
            "dataset features do not match the fitted report (got {} columns, report has {})",
            dataset.dim(),
            report.original_features.len()
        )));
    }
    let survivors: Vec<usize> = report
        .retained
        .iter()
        .map(|name| {
            dataset
                .feature_names
                .iter()
                .position(|f| f == name)
                .expect("retained names come from original_features")
        })
        .collect();

    let n = dataset.n();
    let mut features = ndarray::Array2::zeros((n, survivors.len()));
    for (out_j, (&j, (&min, &max))) in survivors
        .iter()
        .zip(report.scale_min.iter().zip(report.scale_max.iter()))
        .enumerate()
    {
        let range = max - min;
        for i in 0..n {
            features[[i, out_j]] = if range == 0.0 {
                0.0
            } else {
                (dataset.features[[i, j]] - min) / range
            };
        }
    }

    Ok(Dataset {
        name: dataset.name.clone(),
        feature_names: report.retained.clone(),
        features,
        labels: dataset.labels.clone(),
    })
}
