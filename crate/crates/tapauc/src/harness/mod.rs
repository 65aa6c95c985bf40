//! Experiment harness: hyperparameter definitions, single-fold training,
//! grid search, and report emission.

mod grid;
mod report;

pub use grid::{
    default_grid, grid_from_file, prepare_folds, run_grid, ConfigAggregate, FoldPreprocess,
    GridRunOutput, GridSearchResult, PreparedFolds,
};
pub use report::{
    aggregate_report, read_fold_records, rebuild_results, render_summary_table,
    render_uncertainty_table, write_run_outputs, write_tables, DatasetSummary, MethodGridResult,
    MethodSummary, PreprocessArtifact, SummaryReport, UncertaintyRow,
};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{
    confusion_metrics, roc_auc, uncertainty_interval, zfn_threshold, ConfusionMetrics,
    ThresholdResult, UncertaintyReport,
};
use crate::losses::{approx_auc_loss, bce_loss, tapauc_loss, Alpha, ScorePartition, SelectionSchedule};
use crate::nn::{MlpModel, Mode, NetworkConfig};
use crate::optim::OptimizerState;

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bce,
    AucHinge,
    Tapauc,
}

impl Method {
    pub fn all() -> [Method; 3] {
        [Method::Bce, Method::AucHinge, Method::Tapauc]
    }

    pub fn label(&self) -> &'static str {
        match self {
            Method::Bce => "bce",
            Method::AucHinge => "auc_hinge",
            Method::Tapauc => "tapauc",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Gradient batch granularity: one full-dataset batch per epoch (default)
/// or class-stratified mini-batches of roughly the given size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BatchSizeRepr", into = "BatchSizeRepr")]
pub enum BatchSize {
    Full,
    Fixed(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BatchSizeRepr {
    Word(String),
    Value(usize),
}

impl From<BatchSize> for BatchSizeRepr {
    fn from(b: BatchSize) -> Self {
        match b {
            BatchSize::Full => BatchSizeRepr::Word("full".into()),
            BatchSize::Fixed(n) => BatchSizeRepr::Value(n),
        }
    }
}

impl TryFrom<BatchSizeRepr> for BatchSize {
    type Error = String;

    fn try_from(repr: BatchSizeRepr) -> std::result::Result<Self, String> {
        match repr {
            BatchSizeRepr::Word(w) if w == "full" => Ok(BatchSize::Full),
            BatchSizeRepr::Word(w) => Err(format!("unknown batch size \"{w}\"")),
            BatchSizeRepr::Value(0) => Err("batch size must be >= 1".into()),
            BatchSizeRepr::Value(n) => Ok(BatchSize::Fixed(n)),
        }
    }
}

/// One grid point: a method plus the knobs that method actually uses.
/// Fields irrelevant to the method must be `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub method: Method,
    pub e_total: usize,
    /// Warmup fraction of `e_total` spent on the full negative set
    /// (tapauc only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warmup_fraction: Option<f64>,
    /// Ranking margin (hinge-based methods only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gamma: Option<f64>,
    /// Hard-negative fraction (tapauc only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<Alpha>,
    pub learning_rate: f64,
    pub batch_size: BatchSize,
}

impl HyperParams {
    pub fn bce(e_total: usize) -> Self {
        HyperParams {
            method: Method::Bce,
            e_total,
            warmup_fraction: None,
            gamma: None,
            alpha: None,
            learning_rate: 0.01,
            batch_size: BatchSize::Full,
        }
    }

    pub fn auc_hinge(e_total: usize, gamma: f64) -> Self {
        HyperParams {
            method: Method::AucHinge,
            e_total,
            warmup_fraction: None,
            gamma: Some(gamma),
            alpha: None,
            learning_rate: 0.01,
            batch_size: BatchSize::Full,
        }
    }

    pub fn tapauc(e_total: usize, warmup_fraction: f64, gamma: f64, alpha: Alpha) -> Self {
        HyperParams {
            method: Method::Tapauc,
            e_total,
            warmup_fraction: Some(warmup_fraction),
            gamma: Some(gamma),
            alpha: Some(alpha),
            learning_rate: 0.01,
            batch_size: BatchSize::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.e_total == 0 {
            return Err(Error::InvalidConfig("e_total must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        let requires = |field: &Option<f64>, name: &str, wanted: bool| -> Result<()> {
            match (field.is_some(), wanted) {
                (true, false) => Err(Error::InvalidConfig(format!(
                    "{name} does not apply to method {}",
                    self.method
                ))),
                (false, true) => Err(Error::InvalidConfig(format!(
                    "method {} requires {name}",
                    self.method
                ))),
                _ => Ok(()),
            }
        };
        let wants_margin = self.method != Method::Bce;
        let wants_tapauc_fields = self.method == Method::Tapauc;
        requires(&self.gamma, "gamma", wants_margin)?;
        requires(&self.warmup_fraction, "warmup_fraction", wants_tapauc_fields)?;
        match (self.alpha.is_some(), wants_tapauc_fields) {
            (true, false) => {
                return Err(Error::InvalidConfig(format!(
                    "alpha does not apply to method {}",
                    self.method
                )))
            }
            (false, true) => {
                return Err(Error::InvalidConfig(format!(
                    "method {} requires alpha",
                    self.method
                )))
            }
            _ => {}
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) {
                return Err(Error::InvalidConfig(format!("gamma must be positive, got {g}")));
            }
        }
        if let Some(w) = self.warmup_fraction {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidConfig(format!(
                    "warmup_fraction must lie in [0,1], got {w}"
                )));
            }
        }
        if let Some(a) = self.alpha {
            a.validate()?;
        }
        if let BatchSize::Fixed(0) = self.batch_size {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        Ok(())
    }

    /// Total-order key used as the final deterministic tie-break in grid
    /// selection: method, then epoch count, then each knob (non-negative
    /// floats compare correctly through their bit patterns; absent knobs
    /// sort first).
    pub fn config_key(&self) -> (u8, usize, u64, u64, u64, u64) {
        let float_key = |v: Option<f64>| v.map_or(0, |f| 1 + f.to_bits());
        let alpha_key = match self.alpha {
            None => 0u64,
            Some(Alpha::Single) => 1,
            Some(Alpha::Fraction(f)) => 2 + f.to_bits(),
        };
        let batch_key = match self.batch_size {
            BatchSize::Full => 0u64,
            BatchSize::Fixed(n) => 1 + n as u64,
        };
        (
            self.method as u8,
            self.e_total,
            float_key(self.warmup_fraction),
            float_key(self.gamma),
            alpha_key,
            batch_key,
        )
    }

    /// Compact single-line description used in tables and logs.
    pub fn describe(&self) -> String {
        let mut parts = vec![self.method.to_string(), format!("epochs={}", self.e_total)];
        if let Some(w) = self.warmup_fraction {
            parts.push(format!("warmup={w}"));
        }
        if let Some(g) = self.gamma {
            parts.push(format!("gamma={g}"));
        }
        if let Some(a) = self.alpha {
            parts.push(format!("alpha={a}"));
        }
        if let BatchSize::Fixed(n) = self.batch_size {
            parts.push(format!("batch={n}"));
        }
        parts.join(" ")
    }

    fn schedule(&self) -> Result<Option<SelectionSchedule>> {
        match self.method {
            Method::Tapauc => Ok(Some(SelectionSchedule::from_fraction(
                self.e_total,
                self.warmup_fraction.expect("validated"),
                self.alpha.expect("validated"),
                self.gamma.expect("validated"),
            )?)),
            _ => Ok(None),
        }
    }
}

/// Result of one completed (repetition, fold) training job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub hyperparams: HyperParams,
    pub repetition: usize,
    pub fold: usize,
    pub seed: u64,
    pub threshold: ThresholdResult,
    pub train_metrics: ConfusionMetrics,
    pub val_metrics: ConfusionMetrics,
    pub uncertainty: UncertaintyReport,
    pub val_auc: f64,
    /// Mean training loss of the final epoch.
    pub final_loss: f64,
    /// Wall-clock seconds; kept out of the serialized form so identical
    /// seeded runs emit byte-identical reports.
    #[serde(skip)]
    pub duration_secs: f64,
}

/// A fold that could not complete (e.g. the loss went non-finite). The run
/// continues; failures are counted and excluded from aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub hyperparams: HyperParams,
    pub repetition: usize,
    pub fold: usize,
    pub seed: u64,
    pub error: String,
}

/// One line of `fold_reports.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FoldRecord {
    Ok(FoldReport),
    Failed(FoldFailure),
}

impl FoldRecord {
    pub fn hyperparams(&self) -> &HyperParams {
        match self {
            FoldRecord::Ok(r) => &r.hyperparams,
            FoldRecord::Failed(f) => &f.hyperparams,
        }
    }
}

/// Preprocessed train/validation pair for one (repetition, fold) cell.
#[derive(Debug, Clone)]
pub struct FoldContext {
    pub train: Dataset,
    pub val: Dataset,
    pub repetition: usize,
    pub fold: usize,
    pub seed: u64,
}

/// Class-stratified mini-batch row assignments: every batch receives at
/// least one member of each class (hinge losses need both, batch norm needs
/// two rows total).
fn stratified_batches(
    labels: &[u8],
    batch_size: BatchSize,
    rng: &mut impl rand::Rng,
) -> Vec<Vec<usize>> {
    let n = labels.len();
    let requested = match batch_size {
        BatchSize::Full => return vec![(0..n).collect()],
        BatchSize::Fixed(b) => b,
    };
    use rand::seq::SliceRandom;
    let mut positives: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
    let mut negatives: Vec<usize> = (0..n).filter(|&i| labels[i] == 0).collect();
    positives.shuffle(rng);
    negatives.shuffle(rng);
    let wanted = n.div_ceil(requested);
    let num_batches = wanted.clamp(1, positives.len().min(negatives.len()));
    let mut batches: Vec<Vec<usize>> = vec![Vec::new(); num_batches];
    for (i, idx) in positives.into_iter().enumerate() {
        batches[i % num_batches].push(idx);
    }
    for (i, idx) in negatives.into_iter().enumerate() {
        batches[i % num_batches].push(idx);
    }
    batches
}

/// Trains one model on a preprocessed fold and evaluates it.
///
/// Runs `e_total` epochs of forward / loss / backward / optimizer step with
/// the method's objective, derives the zero-false-negative threshold from
/// eval-mode scores on the full training split, and reports validation
/// metrics plus the uncertainty interval at that threshold. Deterministic
/// given `ctx.seed`.
pub fn train_one(ctx: &FoldContext, hp: &HyperParams) -> Result<FoldReport> {
    let started = std::time::Instant::now();
    hp.validate()?;
    let schedule = hp.schedule()?;

    let config = NetworkConfig::new(ctx.train.dim());
    let mut model = MlpModel::init(config, ctx.seed)?;
    let mut optimizer = OptimizerState::with_learning_rate(&config, hp.learning_rate);
    // dropout/batching stream, decoupled from the initialization draws by a
    // fixed offset
    let mut rng = crate::seeded_rng(ctx.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));

    let labels = &ctx.train.labels;
    let mut final_loss = 0.0;
    for epoch in 0..hp.e_total {
        let batches = stratified_batches(labels, hp.batch_size, &mut rng);
        let mut epoch_loss = 0.0;
        for batch_rows in &batches {
            let batch = ctx.train.features.select(ndarray::Axis(0), batch_rows);
            let batch_labels: Vec<u8> = batch_rows.iter().map(|&i| labels[i]).collect();
            let (scores, cache) = model.forward(batch.view(), Mode::Train, &mut rng)?;
            let scores = scores.as_slice().expect("contiguous scores");

            let loss = match hp.method {
                Method::Bce => bce_loss(scores, &batch_labels)?,
                Method::AucHinge => {
                    let partition = ScorePartition::from_labels(scores, &batch_labels)?;
                    let result = approx_auc_loss(&partition, hp.gamma.expect("validated"))?;
                    crate::losses::LossResult {
                        value: result.value,
                        score_gradients: partition
                            .scatter_gradients(&result.score_gradients, scores.len())?,
                    }
                }
                Method::Tapauc => {
                    let partition = ScorePartition::from_labels(scores, &batch_labels)?;
                    let schedule = schedule.as_ref().expect("validated");
                    let result = tapauc_loss(&partition, schedule, epoch)?;
                    crate::losses::LossResult {
                        value: result.value,
                        score_gradients: partition
                            .scatter_gradients(&result.score_gradients, scores.len())?,
                    }
                }
            };
            if !loss.value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss diverged at epoch {epoch} (repetition {}, fold {})",
                    ctx.repetition, ctx.fold
                )));
            }
            let grads = model.backward(&cache, &loss.score_gradients)?;
            optimizer.step(&mut model, &grads)?;
            epoch_loss += loss.value;
        }
        final_loss = epoch_loss / batches.len() as f64;
    }

    // threshold from eval-mode scores on the full training split
    let train_scores = model.predict_scores(ctx.train.features.view())?;
    let train_scores = train_scores.as_slice().expect("contiguous scores");
    let positive_scores: Vec<f64> = train_scores
        .iter()
        .zip(labels.iter())
        .filter(|&(_, &y)| y == 1)
        .map(|(&s, _)| s)
        .collect();
    let threshold = zfn_threshold(&positive_scores)?;
    let train_metrics = confusion_metrics(train_scores, labels, threshold.threshold_zfn)?;
    if train_metrics.tpr != 1.0 {
        return Err(Error::ContractViolation(format!(
            "training TPR at the ZFN threshold must be exactly 1.0, got {}",
            train_metrics.tpr
        )));
    }

    let val_scores = model.predict_scores(ctx.val.features.view())?;
    let val_scores = val_scores.as_slice().expect("contiguous scores");
    let val_labels = &ctx.val.labels;
    let val_metrics = confusion_metrics(val_scores, val_labels, threshold.threshold_zfn)?;
    let uncertainty = uncertainty_interval(val_scores, val_labels, threshold.threshold_zfn)?;
    let val_auc = roc_auc(val_scores, val_labels)?;

    Ok(FoldReport {
        hyperparams: *hp,
        repetition: ctx.repetition,
        fold: ctx.fold,
        seed: ctx.seed,
        threshold,
        train_metrics,
        val_metrics,
        uncertainty,
        val_auc,
        final_loss,
        duration_secs: started.elapsed().as_secs_f64(),
    })
}
