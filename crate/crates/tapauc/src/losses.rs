//! Training losses: binary cross-entropy, the pairwise squared-hinge
//! approximation of AUC, and its partial variant that focuses on the
//! hardest negatives after a warmup period.
//!
//! Every loss returns its value together with exact gradients with respect
//! to the input scores, so the network's `backward` can chain them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to scores before the logarithms of binary cross-entropy.
pub const BCE_CLAMP: f64 = 1e-12;

/// Negative-subset size: either the single hardest negative or the top
/// fraction of negatives by score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AlphaRepr", into = "AlphaRepr")]
pub enum Alpha {
    Single,
    Fraction(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AlphaRepr {
    Word(String),
    Value(f64),
}

impl From<Alpha> for AlphaRepr {
    fn from(alpha: Alpha) -> Self {
        match alpha {
            Alpha::Single => AlphaRepr::Word("single".into()),
            Alpha::Fraction(f) => AlphaRepr::Value(f),
        }
    }
}

impl TryFrom<AlphaRepr> for Alpha {
    type Error = String;

    fn try_from(repr: AlphaRepr) -> std::result::Result<Self, String> {
        match repr {
            AlphaRepr::Word(w) if w == "single" => Ok(Alpha::Single),
            AlphaRepr::Word(w) => Err(format!("unknown alpha \"{w}\" (expected \"single\" or a fraction)")),
            AlphaRepr::Value(v) => {
                Alpha::Fraction(v).validate().map_err(|e| e.to_string())?;
                Ok(Alpha::Fraction(v))
            }
        }
    }
}

impl Alpha {
    pub fn validate(&self) -> Result<()> {
        if let Alpha::Fraction(f) = self {
            if !(*f > 0.0 && *f <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "alpha fraction must lie in (0,1], got {f}"
                )));
            }
        }
        Ok(())
    }

    /// Number of negatives to keep out of `n`: `max(1, floor(alpha*n))` for
    /// a fraction, 1 for `Single`.
    pub fn subset_size(&self, n: usize) -> usize {
        match self {
            Alpha::Single => 1,
            Alpha::Fraction(f) => ((f * n as f64).floor() as usize).max(1),
        }
    }
}

impl std::fmt::Display for Alpha {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Alpha::Single => write!(f, "single"),
            Alpha::Fraction(v) => write!(f, "{v}"),
        }
    }
}

/// Scores of one batch split by label, with the descending order of the
/// negatives precomputed. Keeps back-references into the original score
/// vector so per-instance gradients can be scattered back.
#[derive(Debug, Clone)]
pub struct ScorePartition {
    positive_scores: Vec<f64>,
    negative_scores: Vec<f64>,
    positive_indices: Vec<usize>,
    negative_indices: Vec<usize>,
    /// Indices into `negative_scores`, sorted by score descending; ties keep
    /// the lower index first.
    descending_negative_order: Vec<usize>,
}

impl ScorePartition {
    /// Splits a score vector by its binary labels (1 = positive).
    pub fn from_labels(scores: &[f64], labels: &[u8]) -> Result<ScorePartition> {
        if scores.len() != labels.len() {
            return Err(Error::shape(
                format!("{} labels", scores.len()),
                format!("{}", labels.len()),
            ));
        }
        let mut positive_scores = Vec::new();
        let mut negative_scores = Vec::new();
        let mut positive_indices = Vec::new();
        let mut negative_indices = Vec::new();
        for (i, (&s, &y)) in scores.iter().zip(labels.iter()).enumerate() {
            match y {
                1 => {
                    positive_scores.push(s);
                    positive_indices.push(i);
                }
                0 => {
                    negative_scores.push(s);
                    negative_indices.push(i);
                }
                other => {
                    return Err(Error::ContractViolation(format!(
                        "labels must be 0 or 1, got {other} at position {i}"
                    )))
                }
            }
        }
        ScorePartition::build(positive_scores, negative_scores, positive_indices, negative_indices)
    }

    /// Builds a partition from already-separated score sets; back-references
    /// index the concatenation `[positives..., negatives...]`.
    pub fn from_parts(positives: &[f64], negatives: &[f64]) -> Result<ScorePartition> {
        let np = positives.len();
        ScorePartition::build(
            positives.to_vec(),
            negatives.to_vec(),
            (0..np).collect(),
            (np..np + negatives.len()).collect(),
        )
    }

    fn build(
        positive_scores: Vec<f64>,
        negative_scores: Vec<f64>,
        positive_indices: Vec<usize>,
        negative_indices: Vec<usize>,
    ) -> Result<ScorePartition> {
        if positive_scores.is_empty() || negative_scores.is_empty() {
            return Err(Error::ContractViolation(format!(
                "both classes must be present, got {} positives and {} negatives",
                positive_scores.len(),
                negative_scores.len()
            )));
        }
        let mut order: Vec<usize> = (0..negative_scores.len()).collect();
        order.sort_by(|&a, &b| {
            negative_scores[b]
                .partial_cmp(&negative_scores[a])
                .expect("scores must be comparable")
        });
        Ok(ScorePartition {
            positive_scores,
            negative_scores,
            positive_indices,
            negative_indices,
            descending_negative_order: order,
        })
    }

    pub fn positive_scores(&self) -> &[f64] {
        &self.positive_scores
    }

    pub fn negative_scores(&self) -> &[f64] {
        &self.negative_scores
    }

    pub fn descending_negative_order(&self) -> &[usize] {
        &self.descending_negative_order
    }

    /// Spreads a `[positives..., negatives...]` gradient vector back onto
    /// the original score positions.
    pub fn scatter_gradients(&self, loss_gradients: &[f64], total_len: usize) -> Result<Vec<f64>> {
        let np = self.positive_scores.len();
        let nn = self.negative_scores.len();
        if loss_gradients.len() != np + nn {
            return Err(Error::shape(
                format!("{} loss gradients", np + nn),
                format!("{}", loss_gradients.len()),
            ));
        }
        let mut out = vec![0.0; total_len];
        for (p, &orig) in self.positive_indices.iter().enumerate() {
            out[orig] = loss_gradients[p];
        }
        for (n, &orig) in self.negative_indices.iter().enumerate() {
            out[orig] = loss_gradients[np + n];
        }
        Ok(out)
    }
}

/// Loss value plus exact gradients with respect to the input scores. For
/// the pairwise losses the gradient vector follows the concatenation
/// `[positives..., negatives...]` of the partition that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub score_gradients: Vec<f64>,
}

/// Epoch schedule for the partial loss: warmup epochs train on the full
/// negative set, later epochs on the hardest `alpha` fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionSchedule {
    pub total_epochs: usize,
    pub warmup_epochs: usize,
    pub alpha: Alpha,
    pub margin: f64,
}

impl SelectionSchedule {
    pub fn new(total_epochs: usize, warmup_epochs: usize, alpha: Alpha, margin: f64) -> Result<Self> {
        let schedule = SelectionSchedule {
            total_epochs,
            warmup_epochs,
            alpha,
            margin,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Warmup given as a fraction of the total: `warmup_epochs =
    /// floor(fraction * total_epochs)`.
    pub fn from_fraction(total_epochs: usize, warmup_fraction: f64, alpha: Alpha, margin: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&warmup_fraction) {
            return Err(Error::InvalidConfig(format!(
                "warmup fraction must lie in [0,1], got {warmup_fraction}"
            )));
        }
        let warmup_epochs = (warmup_fraction * total_epochs as f64).floor() as usize;
        SelectionSchedule::new(total_epochs, warmup_epochs, alpha, margin)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(Error::InvalidConfig("total_epochs must be >= 1".into()));
        }
        if self.warmup_epochs > self.total_epochs {
            return Err(Error::InvalidConfig(format!(
                "warmup_epochs {} exceeds total_epochs {}",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if !(self.margin > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        self.alpha.validate()
    }

    pub fn is_warmup(&self, epoch: usize) -> bool {
        epoch < self.warmup_epochs
    }
}

/// Mean binary cross-entropy over the batch. Scores are clamped into
/// `[1e-12, 1-1e-12]` before the logarithms; gradients are evaluated at the
/// clamped score: `d/ds = (-y/s + (1-y)/(1-s)) / n`.
pub fn bce_loss(scores: &[f64], labels: &[u8]) -> Result<LossResult> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            format!("{} labels", scores.len()),
            format!("{}", labels.len()),
        ));
    }
    if scores.is_empty() {
        return Err(Error::ContractViolation("empty batch".into()));
    }
    let n = scores.len() as f64;
    let mut value = 0.0;
    let mut score_gradients = Vec::with_capacity(scores.len());
    for (i, (&raw, &y)) in scores.iter().zip(labels.iter()).enumerate() {
        if y > 1 {
            return Err(Error::ContractViolation(format!(
                "labels must be 0 or 1, got {y} at position {i}"
            )));
        }
        let s = raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let y = y as f64;
        value -= y * s.ln() + (1.0 - y) * (1.0 - s).ln();
        score_gradients.push((-y / s + (1.0 - y) / (1.0 - s)) / n);
    }
    Ok(LossResult {
        value: value / n,
        score_gradients,
    })
}

/// Pairwise squared-hinge ranking loss over all positive/negative pairs:
/// `(1/(|P||N|)) * sum_p sum_n max(0, s_n + margin - s_p)^2`.
///
/// Gradients follow the `[positives..., negatives...]` layout of the
/// partition.
pub fn approx_auc_loss(partition: &ScorePartition, margin: f64) -> Result<LossResult> {
    if !(margin > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "margin must be positive, got {margin}"
        )));
    }
    let positives = partition.positive_scores();
    let negatives = partition.negative_scores();
    let all: Vec<usize> = (0..negatives.len()).collect();
    Ok(pairwise_squared_hinge(positives, negatives, &all, margin))
}

/// Shared kernel: squared hinge over `positives x selected negatives`,
/// normalized by `|P| * |selected|`. `selected` holds indices into
/// `negatives`; gradient entries of unselected negatives stay zero.
fn pairwise_squared_hinge(
    positives: &[f64],
    negatives: &[f64],
    selected: &[usize],
    margin: f64,
) -> LossResult {
    let np = positives.len();
    let denom = (np * selected.len()) as f64;
    let mut value = 0.0;
    let mut score_gradients = vec![0.0; np + negatives.len()];
    for (p, &s_p) in positives.iter().enumerate() {
        for &n in selected {
            let h = (negatives[n] + margin - s_p).max(0.0);
            if h > 0.0 {
                value += h * h;
                let g = 2.0 * h / denom;
                score_gradients[np + n] += g;
                score_gradients[p] -= g;
            }
        }
    }
    LossResult {
        value: value / denom,
        score_gradients,
    }
}

/// Indices of the hardest negatives: the `max(1, floor(alpha*|N|))` largest
/// scores (or the single largest for `Alpha::Single`), ties broken by lower
/// index. Returned in descending score order.
pub fn select_hard_negatives(negatives: &[f64], alpha: Alpha) -> Result<Vec<usize>> {
    if negatives.is_empty() {
        return Err(Error::ContractViolation(
            "hard-negative selection requires at least one negative".into(),
        ));
    }
    alpha.validate()?;
    let mut order: Vec<usize> = (0..negatives.len()).collect();
    order.sort_by(|&a, &b| {
        negatives[b]
            .partial_cmp(&negatives[a])
            .expect("scores must be comparable")
    });
    let k = alpha.subset_size(negatives.len());
    order.truncate(k);
    Ok(order)
}

/// Partial pairwise ranking loss with dynamic hard-negative focus.
///
/// During warmup epochs this is exactly [`approx_auc_loss`] on the full
/// negative set. Afterwards the squared hinge runs over `positives x
/// hardest negatives` only, with the selection recomputed from the current
/// scores on every call; gradients of unselected negatives are exactly
/// zero.
pub fn tapauc_loss(
    partition: &ScorePartition,
    schedule: &SelectionSchedule,
    epoch: usize,
) -> Result<LossResult> {
    schedule.validate()?;
    if epoch >= schedule.total_epochs {
        return Err(Error::ContractViolation(format!(
            "epoch {epoch} outside schedule of {} epochs",
            schedule.total_epochs
        )));
    }
    if schedule.is_warmup(epoch) {
        return approx_auc_loss(partition, schedule.margin);
    }
    let negatives = partition.negative_scores();
    let k = schedule.alpha.subset_size(negatives.len());
    // reuse the partition's precomputed descending order; restoring
    // ascending index order keeps the pair iteration identical to the
    // full-set loss whenever the subset covers every negative
    let mut selected: Vec<usize> = partition.descending_negative_order()[..k].to_vec();
    selected.sort_unstable();
    Ok(pairwise_squared_hinge(
        partition.positive_scores(),
        negatives,
        &selected,
        schedule.margin,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn partition(p: &[f64], n: &[f64]) -> ScorePartition {
        ScorePartition::from_parts(p, n).unwrap()
    }

    /// Straight-line scalar recomputation of mean BCE.
    fn bce_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let n = scores.len() as f64;
        let mut total = 0.0;
        for (&s, &y) in scores.iter().zip(labels.iter()) {
            let s = s.clamp(1e-12, 1.0 - 1e-12);
            total += if y == 1 { -s.ln() } else { -(1.0 - s).ln() };
        }
        total / n
    }

    #[test]
    fn bce_half_score_positive_label_is_ln_two() {
        let r = bce_loss(&[0.5], &[1]).unwrap();
        assert!((r.value - std::f64::consts::LN_2).abs() <= 1e-15);
    }

    #[test]
    fn bce_perfect_predictions_are_nearly_free() {
        let r = bce_loss(&[1.0, 0.0, 1.0], &[1, 0, 1]).unwrap();
        assert!(r.value <= 1e-11, "value {}", r.value);
    }

    #[test]
    fn bce_matches_scalar_recomputation() {
        let scores = [0.11, 0.93, 0.48, 0.27, 0.66, 0.05, 0.81, 0.39];
        let labels = [0, 1, 1, 0, 1, 0, 1, 0];
        let r = bce_loss(&scores, &labels).unwrap();
        assert!((r.value - bce_oracle(&scores, &labels)).abs() <= 1e-12);
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let scores = [0.11, 0.93, 0.48, 0.27, 0.66];
        let labels = [0, 1, 1, 0, 1];
        let r = bce_loss(&scores, &labels).unwrap();
        let eps = 1e-6;
        for i in 0..scores.len() {
            let mut plus = scores;
            plus[i] += eps;
            let mut minus = scores;
            minus[i] -= eps;
            let fd = (bce_loss(&plus, &labels).unwrap().value
                - bce_loss(&minus, &labels).unwrap().value)
                / (2.0 * eps);
            let rel = (r.score_gradients[i] - fd).abs() / fd.abs().max(1e-8);
            assert!(rel <= 1e-6, "grad {} vs fd {fd}", r.score_gradients[i]);
        }
    }

    #[test]
    fn bce_rejects_length_mismatch_and_bad_labels() {
        assert!(bce_loss(&[0.5, 0.5], &[1]).is_err());
        assert!(bce_loss(&[0.5], &[2]).is_err());
    }

    #[test]
    fn separated_pair_has_zero_hinge_loss() {
        let r = approx_auc_loss(&partition(&[1.0], &[0.0]), 0.5).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.score_gradients.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn violating_pair_matches_hand_evaluation() {
        // h = 0.6 + 0.1 - 0.4 = 0.3; value h^2 = 0.09; d/ds_n = +2h = 0.6
        let r = approx_auc_loss(&partition(&[0.4], &[0.6]), 0.1).unwrap();
        assert!((r.value - 0.09).abs() <= 1e-15);
        assert!((r.score_gradients[0] + 0.6).abs() <= 1e-15);
        assert!((r.score_gradients[1] - 0.6).abs() <= 1e-15);
    }

    /// Double-loop recomputation of the full pairwise squared hinge.
    fn hinge_oracle(p: &[f64], n: &[f64], margin: f64) -> (f64, Vec<f64>) {
        let denom = (p.len() * n.len()) as f64;
        let mut value = 0.0;
        let mut grads = vec![0.0; p.len() + n.len()];
        for (i, &sp) in p.iter().enumerate() {
            for (j, &sn) in n.iter().enumerate() {
                let h = (sn + margin - sp).max(0.0);
                value += h * h;
                grads[i] -= 2.0 * h / denom;
                grads[p.len() + j] += 2.0 * h / denom;
            }
        }
        (value / denom, grads)
    }

    #[test]
    fn hinge_loss_matches_double_loop_oracle() {
        let p = [0.81, 0.35, 0.64];
        let n = [0.52, 0.09, 0.77, 0.41, 0.30];
        let r = approx_auc_loss(&partition(&p, &n), 0.3).unwrap();
        let (value, grads) = hinge_oracle(&p, &n, 0.3);
        assert!((r.value - value).abs() <= 1e-12);
        for (a, b) in r.score_gradients.iter().zip(grads.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn empty_class_is_a_contract_violation() {
        assert!(ScorePartition::from_parts(&[], &[0.5]).is_err());
        assert!(ScorePartition::from_parts(&[0.5], &[]).is_err());
        assert!(ScorePartition::from_labels(&[0.5, 0.6], &[1, 1]).is_err());
    }

    #[test]
    fn selection_takes_top_scores() {
        let idx = select_hard_negatives(&[0.9, 0.1, 0.7, 0.3], Alpha::Fraction(0.5)).unwrap();
        assert_eq!(idx, vec![0, 2]);
    }

    #[test]
    fn tiny_alpha_falls_back_to_single_hardest() {
        let idx = select_hard_negatives(&[0.2, 0.8, 0.5, 0.1], Alpha::Fraction(0.05)).unwrap();
        assert_eq!(idx, vec![1]);
    }

    #[test]
    fn equal_scores_break_ties_by_lower_index() {
        let idx = select_hard_negatives(&[0.4, 0.4, 0.4, 0.4], Alpha::Fraction(0.5)).unwrap();
        assert_eq!(idx, vec![0, 1]);
    }

    #[test]
    fn single_alpha_takes_exactly_one() {
        let idx = select_hard_negatives(&[0.2, 0.8, 0.5], Alpha::Single).unwrap();
        assert_eq!(idx, vec![1]);
    }

    #[test]
    fn selection_rejects_empty_and_invalid_alpha() {
        assert!(select_hard_negatives(&[], Alpha::Single).is_err());
        assert!(select_hard_negatives(&[0.5], Alpha::Fraction(0.0)).is_err());
        assert!(select_hard_negatives(&[0.5], Alpha::Fraction(1.5)).is_err());
    }

    #[test]
    fn full_alpha_is_bitwise_identical_to_full_hinge_loss() {
        let p = [0.81, 0.35, 0.64, 0.22];
        let n = [0.52, 0.09, 0.77, 0.41, 0.30, 0.52];
        let part = partition(&p, &n);
        let schedule = SelectionSchedule::new(10, 0, Alpha::Fraction(1.0), 0.3).unwrap();
        let a = tapauc_loss(&part, &schedule, 5).unwrap();
        let b = approx_auc_loss(&part, 0.3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn warmup_epochs_are_bitwise_identical_to_full_hinge_loss() {
        let p = [0.81, 0.35];
        let n = [0.52, 0.09, 0.77];
        let part = partition(&p, &n);
        let schedule = SelectionSchedule::new(10, 4, Alpha::Fraction(0.25), 0.5).unwrap();
        for epoch in 0..4 {
            let a = tapauc_loss(&part, &schedule, epoch).unwrap();
            let b = approx_auc_loss(&part, 0.5).unwrap();
            assert_eq!(a, b);
        }
        // first post-warmup epoch switches to the hard subset
        let after = tapauc_loss(&part, &schedule, 4).unwrap();
        assert_ne!(after, approx_auc_loss(&part, 0.5).unwrap());
    }

    #[test]
    fn partial_loss_matches_hand_evaluation() {
        // hardest third of {0.7, 0.2, 0.1} is {0.7};
        // value = ((0.7+0.1-0.8)^2 + (0.7+0.1-0.6)^2) / 2 = 0.02
        let part = partition(&[0.8, 0.6], &[0.7, 0.2, 0.1]);
        let schedule = SelectionSchedule::new(5, 0, Alpha::Fraction(1.0 / 3.0), 0.1).unwrap();
        let r = tapauc_loss(&part, &schedule, 0).unwrap();
        assert!((r.value - 0.02).abs() <= 1e-15);
    }

    #[test]
    fn unselected_negatives_have_exactly_zero_gradient() {
        let p = [0.9, 0.3, 0.5];
        let n = [0.8, 0.1, 0.6, 0.2, 0.4];
        let part = partition(&p, &n);
        let schedule = SelectionSchedule::new(5, 0, Alpha::Fraction(0.4), 0.7).unwrap();
        let r = tapauc_loss(&part, &schedule, 0).unwrap();
        let selected = select_hard_negatives(&n, Alpha::Fraction(0.4)).unwrap();
        for j in 0..n.len() {
            if !selected.contains(&j) {
                assert_eq!(r.score_gradients[p.len() + j], 0.0);
            }
        }
        // and at least one selected negative pushes down
        assert!(selected
            .iter()
            .any(|&j| r.score_gradients[p.len() + j] > 0.0));
    }

    #[test]
    fn epoch_outside_schedule_is_rejected() {
        let part = partition(&[0.8], &[0.2]);
        let schedule = SelectionSchedule::new(5, 2, Alpha::Single, 0.1).unwrap();
        assert!(tapauc_loss(&part, &schedule, 5).is_err());
    }

    #[test]
    fn loss_is_zero_iff_selected_negatives_are_separated_by_margin() {
        let p = [0.9, 0.85];
        let n = [0.75, 0.3, 0.2];
        let part = partition(&p, &n);
        // hardest negative 0.75: 0.85 >= 0.75 + 0.1 holds exactly
        let sep = SelectionSchedule::new(5, 0, Alpha::Single, 0.1).unwrap();
        assert_eq!(tapauc_loss(&part, &sep, 0).unwrap().value, 0.0);
        // margin 0.2 violates: 0.85 < 0.75 + 0.2
        let tight = SelectionSchedule::new(5, 0, Alpha::Single, 0.2).unwrap();
        assert!(tapauc_loss(&part, &tight, 0).unwrap().value > 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences_away_from_kinks() {
        let p = [0.81, 0.35, 0.64];
        let n = [0.52, 0.09, 0.77, 0.41, 0.30];
        let schedule = SelectionSchedule::new(5, 0, Alpha::Fraction(0.4), 0.3).unwrap();
        let loss_at = |p: &[f64], n: &[f64]| {
            tapauc_loss(&partition(p, n), &schedule, 0).unwrap().value
        };
        let r = tapauc_loss(&partition(&p, &n), &schedule, 0).unwrap();
        let eps = 1e-6;
        for i in 0..p.len() + n.len() {
            let perturb = |delta: f64| {
                let mut p2 = p.to_vec();
                let mut n2 = n.to_vec();
                if i < p.len() {
                    p2[i] += delta;
                } else {
                    n2[i - p.len()] += delta;
                }
                loss_at(&p2, &n2)
            };
            let fd = (perturb(eps) - perturb(-eps)) / (2.0 * eps);
            let diff = (r.score_gradients[i] - fd).abs();
            let rel = diff / fd.abs().max(1e-8);
            assert!(rel <= 1e-6, "index {i}: grad {} vs fd {fd}", r.score_gradients[i]);
        }
    }

    #[test]
    fn gradient_is_exact_on_the_active_side_of_the_hinge() {
        // h = s_n + margin - s_p = exactly 1e-3: active, and the
        // finite-difference window stays on the active side
        let p = [0.700];
        let n = [0.601];
        let part = partition(&p, &n);
        let r = approx_auc_loss(&part, 0.1).unwrap();
        let eps = 1e-6;
        let value = |pp: f64| approx_auc_loss(&partition(&[pp], &n), 0.1).unwrap().value;
        let fd = (value(p[0] + eps) - value(p[0] - eps)) / (2.0 * eps);
        let rel = (r.score_gradients[0] - fd).abs() / fd.abs().max(1e-8);
        assert!(rel <= 1e-6);
    }

    #[test]
    fn scatter_restores_original_positions() {
        let scores = [0.9, 0.2, 0.7, 0.4, 0.6];
        let labels = [1, 0, 0, 1, 0];
        let part = ScorePartition::from_labels(&scores, &labels).unwrap();
        assert_eq!(part.positive_scores(), &[0.9, 0.4]);
        assert_eq!(part.negative_scores(), &[0.2, 0.7, 0.6]);
        let loss_grads = vec![10.0, 20.0, 1.0, 2.0, 3.0];
        let scattered = part.scatter_gradients(&loss_grads, scores.len()).unwrap();
        assert_eq!(scattered, vec![10.0, 1.0, 2.0, 20.0, 3.0]);
    }

    #[test]
    fn alpha_serializes_as_word_or_number() {
        assert_eq!(serde_json::to_string(&Alpha::Single).unwrap(), "\"single\"");
        assert_eq!(serde_json::to_string(&Alpha::Fraction(0.25)).unwrap(), "0.25");
        assert_eq!(
            serde_json::from_str::<Alpha>("\"single\"").unwrap(),
            Alpha::Single
        );
        assert_eq!(
            serde_json::from_str::<Alpha>("0.5").unwrap(),
            Alpha::Fraction(0.5)
        );
        assert!(serde_json::from_str::<Alpha>("1.5").is_err());
        assert!(serde_json::from_str::<Alpha>("\"double\"").is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn score_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(0.01f64..0.99, 1..max_len)
        }

        proptest! {
            #[test]
            fn losses_are_non_negative(
                p in score_vec(12),
                n in score_vec(12),
                margin in 0.05f64..1.0,
            ) {
                let part = partition(&p, &n);
                prop_assert!(approx_auc_loss(&part, margin).unwrap().value >= 0.0);
                let schedule = SelectionSchedule::new(4, 0, Alpha::Fraction(0.5), margin).unwrap();
                prop_assert!(tapauc_loss(&part, &schedule, 1).unwrap().value >= 0.0);
            }

            #[test]
            fn growing_alpha_never_shrinks_the_selection(
                n in score_vec(20),
                a in 0.05f64..0.95,
                b in 0.05f64..0.95,
            ) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let small = select_hard_negatives(&n, Alpha::Fraction(lo)).unwrap();
                let large = select_hard_negatives(&n, Alpha::Fraction(hi)).unwrap();
                prop_assert!(small.len() <= large.len());
                for idx in &small {
                    prop_assert!(large.contains(idx));
                }
            }

            #[test]
            fn full_alpha_selects_every_negative(n in score_vec(20)) {
                let mut idx = select_hard_negatives(&n, Alpha::Fraction(1.0)).unwrap();
                idx.sort_unstable();
                prop_assert_eq!(idx, (0..n.len()).collect::<Vec<_>>());
            }

            #[test]
            fn selected_negatives_dominate_unselected(
                n in score_vec(20),
                alpha in 0.05f64..1.0,
            ) {
                let selected = select_hard_negatives(&n, Alpha::Fraction(alpha)).unwrap();
                let min_sel = selected.iter().map(|&i| n[i]).fold(f64::INFINITY, f64::min);
                for (i, &score) in n.iter().enumerate() {
                    if !selected.contains(&i) {
                        prop_assert!(score <= min_sel);
                    }
                }
            }

            #[test]
            fn zero_loss_exactly_characterizes_margin_separation(
                p in score_vec(10),
                n in score_vec(10),
                margin in 0.05f64..1.0,
                alpha in 0.1f64..1.0,
            ) {
                let part = partition(&p, &n);
                let schedule = SelectionSchedule::new(4, 0, Alpha::Fraction(alpha), margin).unwrap();
                let r = tapauc_loss(&part, &schedule, 2).unwrap();
                let selected = select_hard_negatives(&n, Alpha::Fraction(alpha)).unwrap();
                let max_sel = selected.iter().map(|&i| n[i]).fold(f64::NEG_INFINITY, f64::max);
                let min_p = p.iter().copied().fold(f64::INFINITY, f64::min);
                prop_assert_eq!(r.value == 0.0, min_p >= max_sel + margin);
            }

            #[test]
            fn pairwise_loss_matches_oracle_on_random_instances(
                p in score_vec(16),
                n in score_vec(16),
                margin in 0.05f64..1.0,
            ) {
                let part = partition(&p, &n);
                let r = approx_auc_loss(&part, margin).unwrap();
                let (value, grads) = hinge_oracle(&p, &n, margin);
                prop_assert!((r.value - value).abs() <= 1e-12);
                for (a, b) in r.score_gradients.iter().zip(grads.iter()) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }
}
