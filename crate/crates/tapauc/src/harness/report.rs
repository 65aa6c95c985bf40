//! Cross-dataset aggregation into summary and uncertainty tables, plus
//! emission of every output file of a run.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::{aggregate_config, select_best, FoldPreprocess, GridRunOutput, GridSearchResult};
use super::{FoldRecord, HyperParams, Method};
use crate::error::{Error, Result};

/// One method's headline numbers on one dataset: the selected
/// configuration's mean validation metrics (fractions, not percent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub accuracy: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub val_auc: f64,
    pub selected: HyperParams,
    pub infeasible: bool,
    pub failed_folds: usize,
}

/// One row of the uncertainty matrix: interval statistics of the selected
/// configuration, averaged over folds. Both the absolute lower bound and
/// the interval width are reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRow {
    pub dataset: String,
    pub method: Method,
    pub mean_threshold: f64,
    pub mean_lower_bound: f64,
    pub mean_interval_width: f64,
    pub manual_checks_pct: f64,
    pub useful_checks_pct: f64,
}

/// Per-dataset block of the summary matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dataset: String,
    pub methods: Vec<MethodSummary>,
}

/// The whole experiment summary: metric matrix plus uncertainty matrix,
/// each with an unweighted MEAN row across datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub datasets: Vec<DatasetSummary>,
    /// Unweighted per-method mean over all datasets carrying that method.
    pub mean: Vec<MethodSummary>,
    pub uncertainty: Vec<UncertaintyRow>,
    pub uncertainty_mean: Vec<UncertaintyRow>,
}

fn method_summary(method: Method, result: &GridSearchResult) -> MethodSummary {
    let agg = result.selected_aggregate();
    MethodSummary {
        method,
        accuracy: agg.mean_accuracy,
        tpr: agg.mean_tpr,
        fpr: agg.mean_fpr,
        val_auc: agg.mean_val_auc,
        selected: agg.hyperparams,
        infeasible: result.infeasible,
        failed_folds: result.aggregates.iter().map(|a| a.failed_folds).sum(),
    }
}

fn uncertainty_row(dataset: &str, method: Method, result: &GridSearchResult) -> UncertaintyRow {
    let agg = result.selected_aggregate();
    UncertaintyRow {
        dataset: dataset.to_string(),
        method,
        mean_threshold: agg.mean_threshold,
        mean_lower_bound: agg.mean_lower_bound,
        mean_interval_width: agg.mean_interval_width,
        manual_checks_pct: agg.mean_manual_checks_pct,
        useful_checks_pct: agg.mean_useful_checks_pct,
    }
}

/// Builds the summary matrices from per-(dataset, method) grid results.
/// Dataset order follows first appearance; methods are displayed in a fixed
/// order. The MEAN rows are unweighted arithmetic means over datasets.
pub fn aggregate_report(cells: &[(Method, GridSearchResult)]) -> Result<SummaryReport> {
    if cells.is_empty() {
        return Err(Error::ContractViolation(
            "nothing to aggregate: no completed dataset x method cell".into(),
        ));
    }
    let mut dataset_order: Vec<String> = Vec::new();
    for (_, result) in cells {
        if !dataset_order.contains(&result.dataset) {
            dataset_order.push(result.dataset.clone());
        }
    }
    let methods: Vec<Method> = Method::all()
        .into_iter()
        .filter(|m| cells.iter().any(|(cm, _)| cm == m))
        .collect();

    let mut datasets = Vec::new();
    let mut uncertainty = Vec::new();
    for name in &dataset_order {
        let mut method_rows = Vec::new();
        for &method in &methods {
            if let Some((_, result)) = cells
                .iter()
                .find(|(m, r)| *m == method && &r.dataset == name)
            {
                method_rows.push(method_summary(method, result));
                uncertainty.push(uncertainty_row(name, method, result));
            }
        }
        datasets.push(DatasetSummary {
            dataset: name.clone(),
            methods: method_rows,
        });
    }

    let mut mean = Vec::new();
    let mut uncertainty_mean = Vec::new();
    for &method in &methods {
        let rows: Vec<&MethodSummary> = datasets
            .iter()
            .flat_map(|d| d.methods.iter().filter(|m| m.method == method))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let n = rows.len() as f64;
        let selected = rows[0].selected;
        mean.push(MethodSummary {
            method,
            accuracy: rows.iter().map(|r| r.accuracy).sum::<f64>() / n,
            tpr: rows.iter().map(|r| r.tpr).sum::<f64>() / n,
            fpr: rows.iter().map(|r| r.fpr).sum::<f64>() / n,
            val_auc: rows.iter().map(|r| r.val_auc).sum::<f64>() / n,
            selected,
            infeasible: rows.iter().any(|r| r.infeasible),
            failed_folds: rows.iter().map(|r| r.failed_folds).sum(),
        });
        let urows: Vec<&UncertaintyRow> = uncertainty
            .iter()
            .filter(|u| u.method == method)
            .collect();
        let un = urows.len() as f64;
        uncertainty_mean.push(UncertaintyRow {
            dataset: "MEAN".into(),
            method,
            mean_threshold: urows.iter().map(|u| u.mean_threshold).sum::<f64>() / un,
            mean_lower_bound: urows.iter().map(|u| u.mean_lower_bound).sum::<f64>() / un,
            mean_interval_width: urows.iter().map(|u| u.mean_interval_width).sum::<f64>() / un,
            manual_checks_pct: urows.iter().map(|u| u.manual_checks_pct).sum::<f64>() / un,
            useful_checks_pct: urows.iter().map(|u| u.useful_checks_pct).sum::<f64>() / un,
        });
    }

    Ok(SummaryReport {
        datasets,
        mean,
        uncertainty,
        uncertainty_mean,
    })
}

/// Plain-text metric matrix; values in percent, one block per method, MEAN
/// row last.
pub fn render_summary_table(report: &SummaryReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "validation metrics of the selected configuration (values in %)");
    for mean_row in &report.mean {
        let method = mean_row.method;
        let _ = writeln!(out);
        let _ = writeln!(out, "== {method} ==");
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>8} {:>8} {:>8}  {}",
            "dataset", "ACC", "TPR", "FPR", "AUC", "selected configuration"
        );
        for d in &report.datasets {
            for m in d.methods.iter().filter(|m| m.method == method) {
                let _ = writeln!(
                    out,
                    "{:<10} {:>8.2} {:>8.2} {:>8.2} {:>8.2}  {}{}",
                    d.dataset,
                    100.0 * m.accuracy,
                    100.0 * m.tpr,
                    100.0 * m.fpr,
                    100.0 * m.val_auc,
                    m.selected.describe(),
                    if m.infeasible { "  [no config met the FPR cap]" } else { "" },
                );
            }
        }
        let _ = writeln!(
            out,
            "{:<10} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            "MEAN",
            100.0 * mean_row.accuracy,
            100.0 * mean_row.tpr,
            100.0 * mean_row.fpr,
            100.0 * mean_row.val_auc,
        );
    }
    out
}

/// Plain-text uncertainty matrix: thresholds and interval bounds as raw
/// scores, check rates in percent.
pub fn render_uncertainty_table(report: &SummaryReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "uncertainty intervals of the selected configuration (check rates in %)"
    );
    for mean_row in &report.uncertainty_mean {
        let method = mean_row.method;
        let _ = writeln!(out);
        let _ = writeln!(out, "== {method} ==");
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>12} {:>10} {:>9} {:>9}",
            "dataset", "threshold", "lower_bound", "width", "manual", "useful"
        );
        let rows = report
            .uncertainty
            .iter()
            .filter(|u| u.method == method)
            .chain(std::iter::once(mean_row));
        for u in rows {
            let _ = writeln!(
                out,
                "{:<10} {:>10.4} {:>12.4} {:>10.4} {:>9.2} {:>9.2}",
                u.dataset,
                u.mean_threshold,
                u.mean_lower_bound,
                u.mean_interval_width,
                100.0 * u.manual_checks_pct,
                100.0 * u.useful_checks_pct,
            );
        }
    }
    out
}

/// `grid_result.json` entry: a method tag next to its grid outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodGridResult {
    pub method: Method,
    pub grid: GridSearchResult,
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Writes every artifact of a run into `dir`:
/// `fold_reports.jsonl`, `grid_result.json`, `summary_table.txt`,
/// `uncertainty_table.txt`, `preprocess_report.json`, `summary.json`, and
/// `config_echo.json` (the caller passes the resolved configuration).
/// All files are deterministic functions of the run results.
pub fn write_run_outputs(
    dir: &Path,
    config_echo: &impl Serialize,
    preprocess: &PreprocessArtifact,
    outputs: &[(Method, GridRunOutput)],
    summary: &SummaryReport,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;

    let mut jsonl = String::new();
    for (_, output) in outputs {
        for record in &output.fold_records {
            jsonl.push_str(&serde_json::to_string(record)?);
            jsonl.push('\n');
        }
    }
    write_text(&dir.join("fold_reports.jsonl"), &jsonl)?;

    let grid_results: Vec<MethodGridResult> = outputs
        .iter()
        .map(|(method, output)| MethodGridResult {
            method: *method,
            grid: output.result.clone(),
        })
        .collect();
    write_json(&dir.join("grid_result.json"), &grid_results)?;
    write_json(&dir.join("preprocess_report.json"), preprocess)?;
    write_json(&dir.join("config_echo.json"), config_echo)?;
    write_json(&dir.join("summary.json"), summary)?;
    write_text(&dir.join("summary_table.txt"), &render_summary_table(summary))?;
    write_text(
        &dir.join("uncertainty_table.txt"),
        &render_uncertainty_table(summary),
    )?;
    Ok(())
}

/// Rewrites just the derived table files, leaving the raw fold records
/// untouched (used by the `report` subcommand).
pub fn write_tables(
    dir: &Path,
    summary: &SummaryReport,
    summary_table: &str,
    uncertainty_table: &str,
) -> Result<()> {
    write_json(&dir.join("summary.json"), summary)?;
    write_text(&dir.join("summary_table.txt"), summary_table)?;
    write_text(&dir.join("uncertainty_table.txt"), uncertainty_table)
}

/// `preprocess_report.json` payload: the per-fold preprocessing decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessArtifact {
    pub dataset: String,
    pub correlation_cutoff: f64,
    pub folds: Vec<FoldPreprocess>,
}

/// Regroups raw fold records (as read back from `fold_reports.jsonl`) into
/// per-method grid results, re-running aggregation and selection.
/// Configuration order follows first appearance in the record stream.
pub fn rebuild_results(
    records: &[FoldRecord],
    dataset: &str,
    fpr_cap: f64,
) -> Result<Vec<(Method, GridSearchResult)>> {
    let mut config_order: Vec<HyperParams> = Vec::new();
    for record in records {
        if !config_order.contains(record.hyperparams()) {
            config_order.push(*record.hyperparams());
        }
    }
    let mut out = Vec::new();
    for method in Method::all() {
        let configs: Vec<&HyperParams> = config_order
            .iter()
            .filter(|hp| hp.method == method)
            .collect();
        if configs.is_empty() {
            continue;
        }
        let aggregates: Vec<_> = configs
            .iter()
            .map(|hp| {
                let config_records: Vec<FoldRecord> = records
                    .iter()
                    .filter(|r| r.hyperparams() == *hp)
                    .cloned()
                    .collect();
                aggregate_config(hp, &config_records)
            })
            .collect();
        let (selected, infeasible) = select_best(&aggregates, fpr_cap)?;
        out.push((
            method,
            GridSearchResult {
                dataset: dataset.to_string(),
                fpr_cap,
                aggregates,
                selected,
                infeasible,
            },
        ));
    }
    if out.is_empty() {
        return Err(Error::ContractViolation("no fold records to rebuild from".into()));
    }
    Ok(out)
}

/// Parses a `fold_reports.jsonl` file.
pub fn read_fold_records(path: &Path) -> Result<Vec<FoldRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut records = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line)?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::grid::ConfigAggregate;

    fn grid_result(dataset: &str, tpr: f64, fpr: f64, accuracy: f64) -> GridSearchResult {
        let hyperparams = HyperParams::bce(60);
        GridSearchResult {
            dataset: dataset.into(),
            fpr_cap: 0.5,
            aggregates: vec![ConfigAggregate {
                hyperparams,
                mean_accuracy: accuracy,
                mean_tpr: tpr,
                mean_fpr: fpr,
                mean_val_auc: 0.9,
                mean_threshold: 0.3,
                mean_lower_bound: 0.2,
                mean_interval_width: 0.1,
                mean_manual_checks_pct: 0.25,
                mean_useful_checks_pct: 0.01,
                completed_folds: 25,
                failed_folds: 0,
            }],
            selected: 0,
            infeasible: false,
        }
    }

    #[test]
    fn single_cell_mean_row_equals_the_row() {
        let cells = vec![(Method::Bce, grid_result("wdbc", 0.95, 0.3, 0.9))];
        let report = aggregate_report(&cells).unwrap();
        assert_eq!(report.mean.len(), 1);
        assert_eq!(report.mean[0].tpr, report.datasets[0].methods[0].tpr);
        assert_eq!(report.uncertainty_mean[0].manual_checks_pct, 0.25);
    }

    #[test]
    fn two_datasets_average_unweighted() {
        let cells = vec![
            (Method::Bce, grid_result("wdbc", 0.90, 0.30, 0.80)),
            (Method::Bce, grid_result("ccf", 0.98, 0.10, 0.90)),
        ];
        let report = aggregate_report(&cells).unwrap();
        assert!((report.mean[0].tpr - 0.94).abs() <= 1e-12);
        assert!((report.mean[0].fpr - 0.20).abs() <= 1e-12);
        assert!((report.mean[0].accuracy - 0.85).abs() <= 1e-12);
        assert_eq!(report.datasets.len(), 2);
        assert_eq!(report.datasets[0].dataset, "wdbc");
    }

    #[test]
    fn summary_round_trips_through_json() {
        let cells = vec![
            (Method::Bce, grid_result("wdbc", 0.90, 0.30, 0.80)),
            (Method::Tapauc, grid_result("wdbc", 0.99, 0.29, 0.81)),
        ];
        let report = aggregate_report(&cells).unwrap();
        let json = serde_json::to_string_pretty(&report).unwrap();
        let back: SummaryReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn tables_render_every_dataset_and_the_mean_row() {
        let cells = vec![
            (Method::Tapauc, grid_result("wdbc", 0.99, 0.29, 0.81)),
            (Method::Tapauc, grid_result("ccf", 0.97, 0.37, 0.79)),
        ];
        let report = aggregate_report(&cells).unwrap();
        let table = render_summary_table(&report);
        assert!(table.contains("wdbc"));
        assert!(table.contains("ccf"));
        assert!(table.contains("MEAN"));
        assert!(table.contains("99.00"), "{table}");
        let utable = render_uncertainty_table(&report);
        assert!(utable.contains("lower_bound"));
        assert!(utable.contains("MEAN"));
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(aggregate_report(&[]).is_err());
    }
}
