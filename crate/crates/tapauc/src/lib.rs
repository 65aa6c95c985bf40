//! Binary classification built around ranking rather than calibration:
//! a small fully-connected network trained with pairwise surrogate losses
//! (optionally focused on the hardest negatives), thresholded so that no
//! training positive is ever missed, with an uncertainty interval around
//! that threshold and a repeated stratified cross-validated grid search
//! to choose hyperparameters under a false-positive-rate cap.
//!
//! Module map:
//! - [`nn`]: the network (dense → batchnorm → ReLU → dropout → dense →
//!   sigmoid) with hand-derived backward passes.
//! - [`optim`]: Adam with bias correction.
//! - [`losses`]: cross-entropy, the full pairwise squared-hinge ranking
//!   loss, and its hard-negative variant with a warmup schedule.
//! - [`evaluation`]: zero-false-negative thresholding, confusion metrics,
//!   rank-based ROC-AUC, and uncertainty intervals.
//! - [`data`] / [`preprocess`] / [`folds`]: CSV ingestion, per-fold
//!   constant/correlation feature drops with min-max scaling, and repeated
//!   stratified k-fold planning.
//! - [`harness`]: per-fold training jobs, grid search with FPR-capped
//!   selection, aggregation, and report files.
//! - [`selftest`]: fast independent checks runnable on any install.
//!
//! Every random choice flows from an explicit `u64` seed through
//! [`seeded_rng`], so runs are bit-for-bit reproducible regardless of
//! worker-thread count.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod folds;
pub mod harness;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod preprocess;
pub mod selftest;

pub use error::{Error, Result};

/// The crate-wide deterministic RNG: a fixed, portable stream cipher
/// generator so a given seed reproduces the same numbers on every platform
/// and build. All randomness (init, shuffles, dropout, subsampling) goes
/// through here.
pub fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
