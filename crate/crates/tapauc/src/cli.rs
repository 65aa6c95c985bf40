//! Command-line interface: `run` (grid-search experiment), `selftest`
//! (built-in verification), and `report` (rebuild tables from stored fold
//! records).

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{default_data_path, load_ccf, load_csv, load_wdbc, Dataset};
use crate::error::{Error, Result};
use crate::folds::stratified_kfold;
use crate::harness::{
    aggregate_report, default_grid, grid_from_file, prepare_folds, read_fold_records,
    rebuild_results, render_summary_table, render_uncertainty_table, run_grid, write_run_outputs,
    GridRunOutput, HyperParams, Method, PreprocessArtifact,
};
use crate::selftest::run_selftest;

#[derive(Debug, Parser)]
#[command(
    name = "tapauc",
    version,
    about = "Binary classification with ranking losses, hard-negative focus, \
             and zero-false-negative threshold selection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a repeated stratified cross-validated grid search and write all
    /// report files to the output directory.
    Run(RunArgs),
    /// Run the built-in verification checks and exit nonzero on failure.
    Selftest,
    /// Rebuild summary and uncertainty tables from a previous run's
    /// `fold_reports.jsonl`.
    Report(ReportArgs),
}

/// Training objective selector, including `all`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Bce,
    #[value(name = "auc_hinge")]
    AucHinge,
    Tapauc,
    All,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Bce => vec![Method::Bce],
            MethodArg::AucHinge => vec![Method::AucHinge],
            MethodArg::Tapauc => vec![Method::Tapauc],
            MethodArg::All => Method::all().to_vec(),
        }
    }
}

#[derive(Debug, Parser)]
pub struct RunArgs {
    /// Dataset: `wdbc`, `ccf`, or `csv:PATH` for an arbitrary CSV file.
    #[arg(long)]
    pub dataset: String,

    /// Label column name (required for `csv:` datasets, forbidden otherwise).
    #[arg(long)]
    pub label_column: Option<String>,

    /// Label value treated as the positive class (required for `csv:`
    /// datasets, forbidden otherwise).
    #[arg(long)]
    pub positive_label: Option<String>,

    /// Training objective to search, or `all` for every objective.
    #[arg(long, value_enum, default_value = "tapauc")]
    pub method: MethodArg,

    /// Hyperparameter grid: `default` or `file:PATH` (JSON array of
    /// configurations).
    #[arg(long, default_value = "default")]
    pub grid: String,

    /// Number of cross-validation folds.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,

    /// Number of shuffled repetitions of the whole fold split.
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,

    /// Base seed; all per-fold seeds derive from it deterministically.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,

    /// Config selection keeps the best mean TPR among configs whose mean
    /// FPR stays at or below this cap.
    #[arg(long, default_value_t = 0.5)]
    pub fpr_cap: f64,

    /// Output directory for all report files.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,

    /// Rayon worker threads (default: one per core). Results do not depend
    /// on this.
    #[arg(long)]
    pub workers: Option<usize>,

    /// Override the on-disk location of a preset dataset (`wdbc`/`ccf`).
    #[arg(long)]
    pub data_file: Option<PathBuf>,

    /// Absolute-correlation cutoff for the redundant-feature drop.
    #[arg(long, default_value_t = 0.95)]
    pub correlation_cutoff: f64,
}

#[derive(Debug, Parser)]
pub struct ReportArgs {
    /// Directory holding `fold_reports.jsonl` from a previous run.
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,

    /// FPR cap for re-running config selection (default: the value stored
    /// in `config_echo.json`, or 0.5 when absent).
    #[arg(long)]
    pub fpr_cap: Option<f64>,
}

/// Resolved run configuration, echoed verbatim into `config_echo.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub dataset: String,
    pub data_path: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label_column: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub positive_label: Option<String>,
    pub methods: Vec<Method>,
    pub grid_source: String,
    pub folds: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub fpr_cap: f64,
    pub correlation_cutoff: f64,
    pub n_instances: usize,
    pub n_features: usize,
    pub positives: usize,
    pub negatives: usize,
    pub grids: Vec<MethodGrid>,
}

/// The resolved configuration list of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodGrid {
    pub method: Method,
    pub configs: Vec<HyperParams>,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

/// Loads the dataset named on the command line, enforcing which flags apply
/// to which dataset kinds. Returns the dataset and the path it came from.
fn resolve_dataset(args: &RunArgs) -> Result<(Dataset, PathBuf)> {
    if let Some(path) = args.dataset.strip_prefix("csv:") {
        if args.data_file.is_some() {
            return Err(usage("--data-file applies only to preset datasets; the csv: form already names the file"));
        }
        let label_column = args
            .label_column
            .as_deref()
            .ok_or_else(|| usage("csv: datasets require --label-column"))?;
        let positive_label = args
            .positive_label
            .as_deref()
            .ok_or_else(|| usage("csv: datasets require --positive-label"))?;
        let path = PathBuf::from(path);
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "csv".into());
        let dataset = load_csv(&path, label_column, positive_label, &name)?;
        return Ok((dataset, path));
    }

    if args.label_column.is_some() || args.positive_label.is_some() {
        return Err(usage(
            "--label-column/--positive-label apply only to csv: datasets; presets fix them",
        ));
    }
    let path = args
        .data_file
        .clone()
        .unwrap_or_else(|| default_data_path(&args.dataset));
    let dataset = match args.dataset.as_str() {
        "wdbc" => load_wdbc(&path)?,
        "ccf" => load_ccf(&path, args.seed)?,
        other => {
            return Err(usage(format!(
                "unknown dataset \"{other}\" (expected wdbc, ccf, or csv:PATH)"
            )))
        }
    };
    Ok((dataset, path))
}

/// Resolves the per-method configuration lists from `--grid` and `--method`.
fn resolve_grids(args: &RunArgs) -> Result<Vec<MethodGrid>> {
    let file_grid: Option<Vec<HyperParams>> = if args.grid == "default" {
        None
    } else if let Some(path) = args.grid.strip_prefix("file:") {
        Some(grid_from_file(path)?)
    } else {
        return Err(usage(format!(
            "unknown grid \"{}\" (expected default or file:PATH)",
            args.grid
        )));
    };

    let mut grids = Vec::new();
    for method in args.method.methods() {
        let configs = match &file_grid {
            None => default_grid(method),
            Some(all) => all.iter().filter(|hp| hp.method == method).copied().collect(),
        };
        if configs.is_empty() {
            if args.method != MethodArg::All {
                return Err(usage(format!(
                    "the grid file contains no {method} configurations"
                )));
            }
            continue;
        }
        grids.push(MethodGrid { method, configs });
    }
    if grids.is_empty() {
        return Err(usage("the grid file matches none of the requested methods"));
    }
    Ok(grids)
}

fn execute_run(args: &RunArgs) -> Result<()> {
    if let Some(n) = args.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("cannot size worker pool: {e}")))?;
    }
    if !(args.fpr_cap > 0.0 && args.fpr_cap <= 1.0) {
        return Err(usage(format!(
            "--fpr-cap must lie in (0, 1], got {}",
            args.fpr_cap
        )));
    }

    let (dataset, data_path) = resolve_dataset(args)?;
    eprintln!(
        "loaded {}: {} instances, {} features, {} positive / {} negative",
        dataset.name,
        dataset.n(),
        dataset.dim(),
        dataset.positive_count(),
        dataset.negative_count()
    );

    let grids = resolve_grids(args)?;
    let plan = stratified_kfold(&dataset, args.folds, args.repetitions, args.seed)?;
    let prepared = prepare_folds(&dataset, &plan, args.correlation_cutoff)?;

    let mut outputs: Vec<(Method, GridRunOutput)> = Vec::new();
    for grid in &grids {
        eprintln!(
            "searching {} configurations for {} over {} folds",
            grid.configs.len(),
            grid.method,
            prepared.contexts.len()
        );
        let output = run_grid(&prepared, &grid.configs, &dataset.name, args.fpr_cap)?;
        outputs.push((grid.method, output));
    }

    let cells: Vec<_> = outputs
        .iter()
        .map(|(m, o)| (*m, o.result.clone()))
        .collect();
    let summary = aggregate_report(&cells)?;

    let echo = ConfigEcho {
        dataset: dataset.name.clone(),
        data_path: data_path.display().to_string(),
        label_column: args.label_column.clone(),
        positive_label: args.positive_label.clone(),
        methods: grids.iter().map(|g| g.method).collect(),
        grid_source: args.grid.clone(),
        folds: args.folds,
        repetitions: args.repetitions,
        seed: args.seed,
        fpr_cap: args.fpr_cap,
        correlation_cutoff: args.correlation_cutoff,
        n_instances: dataset.n(),
        n_features: dataset.dim(),
        positives: dataset.positive_count(),
        negatives: dataset.negative_count(),
        grids: grids.clone(),
    };
    let preprocess = PreprocessArtifact {
        dataset: dataset.name.clone(),
        correlation_cutoff: args.correlation_cutoff,
        folds: prepared.preprocess.clone(),
    };
    write_run_outputs(&args.out, &echo, &preprocess, &outputs, &summary)?;

    print!("{}", render_summary_table(&summary));
    println!();
    print!("{}", render_uncertainty_table(&summary));
    println!();
    println!("report files written to {}", args.out.display());
    Ok(())
}

fn execute_selftest() -> Result<()> {
    let checks = run_selftest();
    let mut failures = 0usize;
    for check in &checks {
        match &check.outcome {
            Ok(()) => println!("SELFTEST {}: PASS", check.name),
            Err(msg) => {
                failures += 1;
                println!("SELFTEST {}: FAIL — {msg}", check.name);
            }
        }
    }
    println!("selftest: {}/{} checks passed", checks.len() - failures, checks.len());
    if failures > 0 {
        return Err(Error::ContractViolation(format!(
            "{failures} selftest check(s) failed"
        )));
    }
    Ok(())
}

fn execute_report(args: &ReportArgs) -> Result<()> {
    let records_path = args.input.join("fold_reports.jsonl");
    let records = read_fold_records(&records_path)?;
    if records.is_empty() {
        return Err(Error::ContractViolation(format!(
            "{} holds no fold records",
            records_path.display()
        )));
    }

    let echo: Option<ConfigEcho> = std::fs::read_to_string(args.input.join("config_echo.json"))
        .ok()
        .and_then(|text| serde_json::from_str(&text).ok());
    let fpr_cap = args
        .fpr_cap
        .or(echo.as_ref().map(|e| e.fpr_cap))
        .unwrap_or(0.5);
    let dataset = echo
        .as_ref()
        .map(|e| e.dataset.clone())
        .unwrap_or_else(|| "dataset".into());

    let cells = rebuild_results(&records, &dataset, fpr_cap)?;
    let summary = aggregate_report(&cells)?;
    let summary_table = render_summary_table(&summary);
    let uncertainty_table = render_uncertainty_table(&summary);
    crate::harness::write_tables(&args.input, &summary, &summary_table, &uncertainty_table)?;
    print!("{summary_table}");
    println!();
    print!("{uncertainty_table}");
    println!();
    println!("tables rewritten in {}", args.input.display());
    Ok(())
}

/// Entry point behind `main`: parses `argv` and returns the process exit
/// code (0 success, 2 usage error, 1 any other failure).
pub fn cli_main() -> u8 {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => execute_run(args),
        Command::Selftest => execute_selftest(),
        Command::Report(args) => execute_report(args),
    };
    match result {
        Ok(()) => 0,
        Err(Error::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            2
        }
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}
