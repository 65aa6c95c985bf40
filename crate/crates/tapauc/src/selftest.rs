//! Built-in sanity suite: fast, self-contained checks of the numeric core
//! that can run on any install (`tapauc selftest`). Each check re-derives
//! its expectation independently — by finite differences, brute-force
//! enumeration, or hand-computable fixtures — rather than trusting the
//! code under test.

use ndarray::Array2;
use rand::Rng;

use crate::evaluation::{confusion_metrics, roc_auc, uncertainty_interval, zfn_threshold};
use crate::losses::{
    approx_auc_loss, bce_loss, select_hard_negatives, tapauc_loss, Alpha, ScorePartition,
    SelectionSchedule,
};
use crate::nn::{Mode, NetworkConfig};
use crate::optim::OptimizerState;
use crate::seeded_rng;

/// One selftest check: a short machine-friendly name and its outcome
/// (`Err` carries a human-readable diagnosis).
pub struct Check {
    pub name: &'static str,
    pub outcome: std::result::Result<(), String>,
}

impl Check {
    fn run(name: &'static str, f: impl FnOnce() -> std::result::Result<(), String>) -> Check {
        Check {
            name,
            outcome: f(),
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(actual: f64, expected: f64, tol: f64, what: &str) -> std::result::Result<(), String> {
    ensure((actual - expected).abs() <= tol, || {
        format!("{what}: got {actual}, expected {expected} (tol {tol})")
    })
}

/// Relative error with an absolute floor, as used by every gradient check.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central finite differences of `f` against `grad` at `scores`.
fn fd_against(
    scores: &[f64],
    grad: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
    tol: f64,
    what: &str,
) -> std::result::Result<(), String> {
    const EPS: f64 = 1e-6;
    for i in 0..scores.len() {
        let mut plus = scores.to_vec();
        let mut minus = scores.to_vec();
        plus[i] += EPS;
        minus[i] -= EPS;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * EPS);
        if numeric.abs() < 1e-10 && grad[i].abs() < 1e-10 {
            continue;
        }
        let err = rel_err(grad[i], numeric);
        ensure(err <= tol, || {
            format!(
                "{what}: coordinate {i} analytic {} vs numeric {numeric} (rel err {err})",
                grad[i]
            )
        })?;
    }
    Ok(())
}

fn check_bce_gradient() -> std::result::Result<(), String> {
    let mut rng = seeded_rng(11);
    let scores: Vec<f64> = (0..12).map(|_| rng.random_range(0.05..0.95)).collect();
    let labels: Vec<u8> = (0..12).map(|i| (i % 3 == 0) as u8).collect();
    let result = bce_loss(&scores, &labels).map_err(|e| e.to_string())?;
    fd_against(
        &scores,
        &result.score_gradients,
        |s| bce_loss(s, &labels).unwrap().value,
        1e-6,
        "bce gradient",
    )
}

fn check_hinge_gradient() -> std::result::Result<(), String> {
    // Scores placed away from the hinge kink so the derivative exists.
    let positives = [0.8, 0.55];
    let negatives = [0.7, 0.3, 0.1];
    let part = ScorePartition::from_parts(&positives, &negatives).map_err(|e| e.to_string())?;
    let result = approx_auc_loss(&part, 0.2).map_err(|e| e.to_string())?;
    let scores: Vec<f64> = positives.iter().chain(negatives.iter()).copied().collect();
    fd_against(
        &scores,
        &result.score_gradients,
        |s| {
            let p = ScorePartition::from_parts(&s[..2], &s[2..]).unwrap();
            approx_auc_loss(&p, 0.2).unwrap().value
        },
        1e-6,
        "pairwise hinge gradient",
    )
}

fn check_tapauc_gradient() -> std::result::Result<(), String> {
    // Margin chosen so no (positive, negative) pair sits near the hinge
    // kink, where finite differences would disagree with the derivative.
    let schedule =
        SelectionSchedule::new(10, 2, Alpha::Fraction(0.5), 0.25).map_err(|e| e.to_string())?;
    let positives = [0.9, 0.4];
    let negatives = [0.75, 0.6, 0.2, 0.05];
    let part = ScorePartition::from_parts(&positives, &negatives).map_err(|e| e.to_string())?;
    let result = tapauc_loss(&part, &schedule, 5).map_err(|e| e.to_string())?;
    let scores: Vec<f64> = positives.iter().chain(negatives.iter()).copied().collect();
    fd_against(
        &scores,
        &result.score_gradients,
        |s| {
            let p = ScorePartition::from_parts(&s[..2], &s[2..]).unwrap();
            tapauc_loss(&p, &schedule, 5).unwrap().value
        },
        1e-6,
        "hard-negative loss gradient",
    )?;
    // Unselected negatives (the two lowest scorers) must carry exactly zero
    // gradient.
    ensure(
        result.score_gradients[4] == 0.0 && result.score_gradients[5] == 0.0,
        || "unselected negatives received nonzero gradient".into(),
    )
}

fn check_network_gradient() -> std::result::Result<(), String> {
    const EPS: f64 = 1e-4;
    let config = NetworkConfig::new(4).with_dropout(0.0);
    let model = crate::nn::MlpModel::init(config, 3).map_err(|e| e.to_string())?;
    let mut rng = seeded_rng(17);
    let batch = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0f64));
    let weights: Vec<f64> = (0..6).map(|i| (i as f64 - 2.5) / 3.0).collect();
    let objective = |m: &crate::nn::MlpModel| -> f64 {
        let scores = m.predict_scores(batch.view()).unwrap();
        scores.iter().zip(&weights).map(|(s, w)| s * w).sum()
    };

    let mut eval_rng = seeded_rng(0);
    let (_, cache) = model
        .clone()
        .forward(batch.view(), Mode::Eval, &mut eval_rng)
        .map_err(|e| e.to_string())?;
    let grads = model.backward(&cache, &weights).map_err(|e| e.to_string())?;

    // Spot-check one coordinate of every parameter tensor by central
    // differences through the full forward pass.
    let check_param = |get: &dyn Fn(&crate::nn::MlpModel) -> f64,
                           set: &dyn Fn(&mut crate::nn::MlpModel, f64),
                           analytic: f64,
                           what: &str|
     -> std::result::Result<(), String> {
        let base = get(&model);
        let mut probe = model.clone();
        set(&mut probe, base + EPS);
        let up = objective(&probe);
        set(&mut probe, base - EPS);
        let down = objective(&probe);
        let numeric = (up - down) / (2.0 * EPS);
        let err = rel_err(analytic, numeric);
        ensure(err <= 1e-4 || (analytic.abs() < 1e-9 && numeric.abs() < 1e-9), || {
            format!("network gradient {what}: analytic {analytic} vs numeric {numeric}")
        })
    };
    check_param(
        &|m| m.w1[[0, 1]],
        &|m, v| m.w1[[0, 1]] = v,
        grads.w1[[0, 1]],
        "w1[0,1]",
    )?;
    check_param(&|m| m.b1[1], &|m, v| m.b1[1] = v, grads.b1[1], "b1[1]")?;
    check_param(
        &|m| m.bn_scale[0],
        &|m, v| m.bn_scale[0] = v,
        grads.bn_scale[0],
        "bn_scale[0]",
    )?;
    check_param(
        &|m| m.bn_shift[1],
        &|m, v| m.bn_shift[1] = v,
        grads.bn_shift[1],
        "bn_shift[1]",
    )?;
    check_param(&|m| m.w2[0], &|m, v| m.w2[0] = v, grads.w2[0], "w2[0]")?;
    check_param(&|m| m.b2, &|m, v| m.b2 = v, grads.b2, "b2")
}

/// Brute-force re-derivation of the hard-negative loss, structured
/// differently from the library implementation.
fn oracle_loss(positives: &[f64], negatives: &[f64], k: usize, margin: f64) -> f64 {
    let mut order: Vec<usize> = (0..negatives.len()).collect();
    order.sort_by(|&a, &b| {
        negatives[b]
            .partial_cmp(&negatives[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let chosen = &order[..k];
    let mut total = 0.0;
    for &p in positives {
        for &ni in chosen {
            total += (negatives[ni] + margin - p).max(0.0).powi(2);
        }
    }
    total / (positives.len() * k) as f64
}

fn check_loss_oracle() -> std::result::Result<(), String> {
    let mut rng = seeded_rng(23);
    for case in 0..50 {
        let np = rng.random_range(1..=20);
        let nn = rng.random_range(1..=20);
        let positives: Vec<f64> = (0..np).map(|_| rng.random::<f64>()).collect();
        let negatives: Vec<f64> = (0..nn).map(|_| rng.random::<f64>()).collect();
        let alpha = match case % 3 {
            0 => Alpha::Single,
            1 => Alpha::Fraction(0.5),
            _ => Alpha::Fraction(1.0),
        };
        let margin = 0.1 + 0.2 * ((case % 4) as f64);
        let schedule =
            SelectionSchedule::new(10, 0, alpha, margin).map_err(|e| e.to_string())?;
        let part =
            ScorePartition::from_parts(&positives, &negatives).map_err(|e| e.to_string())?;
        let got = tapauc_loss(&part, &schedule, 3).map_err(|e| e.to_string())?.value;
        let want = oracle_loss(&positives, &negatives, alpha.subset_size(nn), margin);
        close(got, want, 1e-12, &format!("loss oracle case {case}"))?;
    }
    Ok(())
}

fn check_roc_auc_enumeration() -> std::result::Result<(), String> {
    let mut rng = seeded_rng(31);
    for case in 0..30 {
        let n = rng.random_range(4..40);
        // Quantized scores force ties through the tie-handling path.
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.random::<f64>() * 8.0).floor() / 8.0)
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
        labels[0] = 1;
        labels[1] = 0;
        let got = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (sp, &lp) in scores.iter().zip(&labels) {
            if lp != 1 {
                continue;
            }
            for (sn, &ln) in scores.iter().zip(&labels) {
                if ln != 0 {
                    continue;
                }
                pairs += 1.0;
                wins += if sp > sn {
                    1.0
                } else if sp == sn {
                    0.5
                } else {
                    0.0
                };
            }
        }
        close(got, wins / pairs, 0.0, &format!("roc_auc enumeration case {case}"))?;
    }
    Ok(())
}

fn check_threshold_rule() -> std::result::Result<(), String> {
    let mut rng = seeded_rng(41);
    for _ in 0..20 {
        let n = rng.random_range(2..30);
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let positive_scores: Vec<f64> = scores
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == 1)
            .map(|(s, _)| *s)
            .collect();
        let threshold = zfn_threshold(&positive_scores).map_err(|e| e.to_string())?;
        let metrics = confusion_metrics(&scores, &labels, threshold.threshold_zfn)
            .map_err(|e| e.to_string())?;
        ensure(metrics.tpr == 1.0 && metrics.fn_ == 0, || {
            format!("threshold rule left {} false negatives", metrics.fn_)
        })?;
    }
    Ok(())
}

fn check_confusion_fixture() -> std::result::Result<(), String> {
    let scores = [0.2, 0.4, 0.6, 0.8];
    let labels = [0, 0, 1, 1];
    let at_06 = confusion_metrics(&scores, &labels, 0.6).map_err(|e| e.to_string())?;
    ensure(
        (at_06.tp, at_06.fp, at_06.tn, at_06.fn_) == (2, 0, 2, 0),
        || format!("confusion at 0.6: {:?}", (at_06.tp, at_06.fp, at_06.tn, at_06.fn_)),
    )?;
    close(at_06.accuracy, 1.0, 0.0, "accuracy at 0.6")?;
    let at_03 = confusion_metrics(&scores, &labels, 0.3).map_err(|e| e.to_string())?;
    ensure(
        (at_03.tp, at_03.fp, at_03.tn, at_03.fn_) == (2, 1, 1, 0),
        || format!("confusion at 0.3: {:?}", (at_03.tp, at_03.fp, at_03.tn, at_03.fn_)),
    )?;
    close(at_03.fpr, 0.5, 0.0, "fpr at 0.3")
}

fn check_uncertainty_fixture() -> std::result::Result<(), String> {
    let scores = [0.2, 0.5, 0.9, 0.15, 0.3];
    let labels = [1, 1, 1, 0, 0];
    let report = uncertainty_interval(&scores, &labels, 0.4).map_err(|e| e.to_string())?;
    close(report.lower_bound, 0.2, 0.0, "lower bound")?;
    close(report.manual_checks_pct, 0.4, 1e-15, "manual check rate")?;
    close(report.useful_checks_pct, 0.2, 1e-15, "useful check rate")
}

fn check_selection_fixture() -> std::result::Result<(), String> {
    let scores = [0.9, 0.1, 0.7, 0.3];
    let mut selected =
        select_hard_negatives(&scores, Alpha::Fraction(0.5)).map_err(|e| e.to_string())?;
    selected.sort_unstable();
    ensure(selected == [0, 2], || format!("selected {selected:?}, expected [0, 2]"))
}

fn check_reduction_identities() -> std::result::Result<(), String> {
    let mut rng = seeded_rng(53);
    let positives: Vec<f64> = (0..7).map(|_| rng.random::<f64>()).collect();
    let negatives: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
    let part = ScorePartition::from_parts(&positives, &negatives).map_err(|e| e.to_string())?;
    let full = approx_auc_loss(&part, 0.3).map_err(|e| e.to_string())?;

    let at_full_alpha = SelectionSchedule::new(10, 0, Alpha::Fraction(1.0), 0.3)
        .and_then(|s| tapauc_loss(&part, &s, 5))
        .map_err(|e| e.to_string())?;
    ensure(at_full_alpha == full, || "alpha=1 does not reproduce the full loss".into())?;

    let in_warmup = SelectionSchedule::new(10, 8, Alpha::Fraction(0.1), 0.3)
        .and_then(|s| tapauc_loss(&part, &s, 5))
        .map_err(|e| e.to_string())?;
    ensure(in_warmup == full, || "warmup epoch does not reproduce the full loss".into())
}

fn check_training_smoke() -> std::result::Result<(), String> {
    // Two well-separated blobs (four informative features, two noise); a
    // short run must drive the training TPR to exactly 1.0 under the
    // min-positive threshold and pull the FPR well down.
    let mut rng = seeded_rng(61);
    let n = 40;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let label = (i % 2) as u8;
        let center = if label == 1 { 0.8 } else { 0.2 };
        let mut row = [0.0f64; 6];
        for slot in row.iter_mut().take(4) {
            *slot = center + rng.random_range(-0.15..0.15);
        }
        row[4] = rng.random_range(0.0..1.0);
        row[5] = rng.random_range(0.0..1.0);
        rows.push(row);
        labels.push(label);
    }
    let batch = Array2::from_shape_fn((n, 6), |(i, j)| rows[i][j]);
    let config = NetworkConfig::new(6);
    let mut model = crate::nn::MlpModel::init(config, 7).map_err(|e| e.to_string())?;
    let mut optimizer = OptimizerState::new(&config);
    let mut rng = seeded_rng(8);
    let schedule =
        SelectionSchedule::new(120, 30, Alpha::Fraction(0.25), 0.3).map_err(|e| e.to_string())?;
    for epoch in 0..120 {
        let (scores, cache) = model
            .forward(batch.view(), Mode::Train, &mut rng)
            .map_err(|e| e.to_string())?;
        let part = ScorePartition::from_labels(scores.as_slice().unwrap(), &labels)
            .map_err(|e| e.to_string())?;
        let loss = tapauc_loss(&part, &schedule, epoch).map_err(|e| e.to_string())?;
        let grads_flat = part
            .scatter_gradients(&loss.score_gradients, n)
            .map_err(|e| e.to_string())?;
        let grads = model.backward(&cache, &grads_flat).map_err(|e| e.to_string())?;
        optimizer.step(&mut model, &grads).map_err(|e| e.to_string())?;
    }
    let scores = model.predict_scores(batch.view()).map_err(|e| e.to_string())?;
    let positive_scores: Vec<f64> = scores
        .iter()
        .zip(&labels)
        .filter(|(_, &l)| l == 1)
        .map(|(s, _)| *s)
        .collect();
    let threshold = zfn_threshold(&positive_scores).map_err(|e| e.to_string())?;
    let metrics = confusion_metrics(scores.as_slice().unwrap(), &labels, threshold.threshold_zfn)
        .map_err(|e| e.to_string())?;
    ensure(metrics.tpr == 1.0, || format!("training smoke: train TPR {}", metrics.tpr))?;
    ensure(metrics.fpr < 0.5, || {
        format!("training smoke: train FPR {} did not drop below 0.5", metrics.fpr)
    })
}

fn check_adam_direction() -> std::result::Result<(), String> {
    // A single Adam step moves each parameter against its gradient sign by
    // roughly the learning rate.
    let config = NetworkConfig::new(2);
    let mut model = crate::nn::MlpModel::init(config, 1).map_err(|e| e.to_string())?;
    let before = model.b2;
    let mut grads = crate::nn::Gradients::zeros(&config);
    grads.b2 = 1.0;
    let mut optimizer = OptimizerState::new(&config);
    optimizer.step(&mut model, &grads).map_err(|e| e.to_string())?;
    let moved = before - model.b2;
    close(moved, 0.01, 1e-6, "adam first-step magnitude")
}

/// Runs every check. Nothing is printed here; the caller renders outcomes.
pub fn run_selftest() -> Vec<Check> {
    vec![
        Check::run("bce_gradient_fd", check_bce_gradient),
        Check::run("pairwise_hinge_gradient_fd", check_hinge_gradient),
        Check::run("hard_negative_gradient_fd", check_tapauc_gradient),
        Check::run("network_gradient_fd", check_network_gradient),
        Check::run("loss_matches_bruteforce_oracle", check_loss_oracle),
        Check::run("roc_auc_matches_enumeration", check_roc_auc_enumeration),
        Check::run("threshold_keeps_all_positives", check_threshold_rule),
        Check::run("confusion_fixture", check_confusion_fixture),
        Check::run("uncertainty_fixture", check_uncertainty_fixture),
        Check::run("hard_negative_selection_fixture", check_selection_fixture),
        Check::run("reduction_identities", check_reduction_identities),
        Check::run("adam_step_direction", check_adam_direction),
        Check::run("training_smoke", check_training_smoke),
    ]
}
