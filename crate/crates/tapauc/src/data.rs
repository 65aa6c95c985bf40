//! Dataset ingestion: CSV loading, label mapping, column dropping, and
//! negative subsampling.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};

/// In-memory tabular dataset with binary labels (1 = positive/abnormal,
/// 0 = negative/normal).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub feature_names: Vec<String>,
    /// `[n x d]` feature matrix, rows in file order.
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn positive_count(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn negative_count(&self) -> usize {
        self.n() - self.positive_count()
    }

    /// New dataset restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            feature_names: self.feature_names.clone(),
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Drops the named feature columns; unknown names are an error.
    pub fn drop_columns(&self, names: &[&str]) -> Result<Dataset> {
        for name in names {
            if !self.feature_names.iter().any(|f| f == name) {
                return Err(Error::InvalidConfig(format!(
                    "cannot drop unknown feature \"{name}\""
                )));
            }
        }
        let keep: Vec<usize> = (0..self.dim())
            .filter(|&j| !names.contains(&self.feature_names[j].as_str()))
            .collect();
        Ok(Dataset {
            name: self.name.clone(),
            feature_names: keep.iter().map(|&j| self.feature_names[j].clone()).collect(),
            features: self.features.select(Axis(1), &keep),
            labels: self.labels.clone(),
        })
    }
}

fn ingestion_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Loads a comma-separated file with a header row. The label column may be
/// named or given as a zero-based index; cells equal to `positive_label`
/// (after trimming) map to 1, everything else to 0. All other columns must
/// parse as numbers.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    positive_label: &str,
    name: &str,
) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingestion_error(path, e.to_string()))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| ingestion_error(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();

    let label_idx = match headers.iter().position(|h| h == label_column) {
        Some(i) => i,
        None => label_column.parse::<usize>().ok().filter(|&i| i < headers.len()).ok_or_else(
            || {
                ingestion_error(
                    path,
                    format!("label column \"{label_column}\" not found in header"),
                )
            },
        )?,
    };

    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    for (row_number, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ingestion_error(path, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(ingestion_error(
                path,
                format!(
                    "row {} has {} fields, header has {}",
                    row_number + 2,
                    record.len(),
                    headers.len()
                ),
            ));
        }
        let mut row = Vec::with_capacity(headers.len() - 1);
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                labels.push(u8::from(cell == positive_label));
            } else {
                let value: f64 = cell.parse().map_err(|_| {
                    ingestion_error(
                        path,
                        format!(
                            "row {}, column \"{}\": cannot parse \"{cell}\" as a number",
                            row_number + 2,
                            headers[j]
                        ),
                    )
                })?;
                if !value.is_finite() {
                    return Err(ingestion_error(
                        path,
                        format!("row {}, column \"{}\": non-finite value", row_number + 2, headers[j]),
                    ));
                }
                row.push(value);
            }
        }
        rows.push(row);
    }

    if rows.len() < 2 {
        return Err(ingestion_error(path, "need at least 2 data rows"));
    }
    let d = feature_names.len();
    let mut features = Array2::zeros((rows.len(), d));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            features[[i, j]] = v;
        }
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(ingestion_error(
            path,
            format!(
                "file holds a single class ({positives} of {} rows match positive label \"{positive_label}\")",
                labels.len()
            ),
        ));
    }

    Ok(Dataset {
        name: name.to_string(),
        feature_names,
        features,
        labels,
    })
}

/// Keeps every positive and a uniform random sample of `target_count`
/// negatives (without replacement), preserving original row order.
/// Deterministic given the seed.
pub fn subsample_negatives(dataset: &Dataset, target_count: usize, seed: u64) -> Result<Dataset> {
    let negative_rows: Vec<usize> = (0..dataset.n()).filter(|&i| dataset.labels[i] == 0).collect();
    if target_count > negative_rows.len() {
        return Err(Error::ContractViolation(format!(
            "cannot sample {target_count} negatives from {}",
            negative_rows.len()
        )));
    }
    let mut rng = crate::seeded_rng(seed);
    let mut shuffled = negative_rows;
    shuffled.shuffle(&mut rng);
    shuffled.truncate(target_count);

    let mut keep: Vec<usize> = (0..dataset.n())
        .filter(|&i| dataset.labels[i] == 1)
        .chain(shuffled)
        .collect();
    keep.sort_unstable();
    Ok(dataset.select_rows(&keep))
}

/// Standard column layout of the breast-cancer file: label column
/// `diagnosis` with `M` positive, plus an `id` column that is not a feature.
pub fn load_wdbc(path: impl AsRef<Path>) -> Result<Dataset> {
    load_csv(path, "diagnosis", "M", "wdbc")?.drop_columns(&["id"])
}

/// Standard column layout of the credit-card-fraud file: label column
/// `Class` with `1` positive. Negatives are subsampled down to the number
/// of positives, deterministically from the seed.
pub fn load_ccf(path: impl AsRef<Path>, seed: u64) -> Result<Dataset> {
    let full = load_csv(path, "Class", "1", "ccf")?;
    subsample_negatives(&full, full.positive_count(), seed)
}

/// Default on-disk location for a named dataset, relative to the working
/// directory.
pub fn default_data_path(dataset: &str) -> PathBuf {
    PathBuf::from("data").join(format!("{dataset}.csv"))
}
