//! Repeated stratified k-fold splitting with documented, replayable seeds.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Shuffle seed of one repetition. The trailing `k` keeps repetition seeds
/// disjoint from the per-(repetition, fold) training seeds produced by
/// [`training_seed`], which end in `0..k`.
pub fn repetition_seed(base_seed: u64, repetition: usize, k: usize) -> u64 {
    base_seed * 1000 + repetition as u64 * 10 + k as u64
}

/// Seed of the training job for one (repetition, fold) cell:
/// `base_seed * 1000 + repetition * 10 + fold`.
pub fn training_seed(base_seed: u64, repetition: usize, fold: usize) -> u64 {
    base_seed * 1000 + repetition as u64 * 10 + fold as u64
}

/// Validation-fold assignments for every repetition, plus the seeds that
/// produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub repetitions: usize,
    pub base_seed: u64,
    pub n_instances: usize,
    /// `seeds[r]` = shuffle seed of repetition `r`.
    pub seeds: Vec<u64>,
    /// `assignments[r][f]` = sorted validation row indices of fold `f` in
    /// repetition `r`.
    pub assignments: Vec<Vec<Vec<usize>>>,
}

impl FoldPlan {
    /// Validation rows of one fold.
    pub fn validation_indices(&self, repetition: usize, fold: usize) -> &[usize] {
        &self.assignments[repetition][fold]
    }

    /// Complement of the validation fold within the full index range.
    pub fn train_indices(&self, repetition: usize, fold: usize) -> Vec<usize> {
        let validation = self.validation_indices(repetition, fold);
        (0..self.n_instances).filter(|i| !validation.contains(i)).collect()
    }
}

/// Splits a dataset into `k` stratified folds, `repetitions` independent
/// times. Per repetition both classes are shuffled with that repetition's
/// seed and dealt round-robin over the folds, so per-fold class counts
/// differ by at most one from perfect stratification.
pub fn stratified_kfold(
    dataset: &Dataset,
    k: usize,
    repetitions: usize,
    base_seed: u64,
) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("fold count must be >= 2, got {k}")));
    }
    if repetitions == 0 {
        return Err(Error::InvalidConfig("repetition count must be >= 1".into()));
    }
    let positives: Vec<usize> = (0..dataset.n()).filter(|&i| dataset.labels[i] == 1).collect();
    let negatives: Vec<usize> = (0..dataset.n()).filter(|&i| dataset.labels[i] == 0).collect();
    for (class, members) in [("positive", &positives), ("negative", &negatives)] {
        if members.len() < k {
            return Err(Error::ContractViolation(format!(
                "{class} class has {} members, fewer than {k} folds",
                members.len()
            )));
        }
    }

    let mut seeds = Vec::with_capacity(repetitions);
    let mut assignments = Vec::with_capacity(repetitions);
    for r in 0..repetitions {
        let seed = repetition_seed(base_seed, r, k);
        seeds.push(seed);
        let mut rng = crate::seeded_rng(seed);

        let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
        for class in [&positives, &negatives] {
            let mut shuffled = class.clone();
            shuffled.shuffle(&mut rng);
            for (i, idx) in shuffled.into_iter().enumerate() {
                folds[i % k].push(idx);
            }
        }
        for fold in &mut folds {
            fold.sort_unstable();
        }
        assignments.push(folds);
    }

    Ok(FoldPlan {
        k,
        repetitions,
        base_seed,
        n_instances: dataset.n(),
        seeds,
        assignments,
    })
}
