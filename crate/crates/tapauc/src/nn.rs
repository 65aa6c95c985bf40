//! Small fully-connected binary scorer with hand-derived forward and
//! backward passes.
//!
//! Architecture: `dense(input -> hidden)` -> batch norm -> ReLU -> dropout
//! -> `dense(hidden -> 1)` -> sigmoid. All arithmetic is `f64` so gradient
//! checks against central finite differences stay tight.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Epsilon added to the variance before taking the square root, in both
/// train and eval mode.
pub const BN_EPS: f64 = 1e-5;

/// Momentum of the running-statistics update: `running = (1-m)*running + m*batch`.
pub const BN_MOMENTUM: f64 = 0.1;

/// Scores are clamped into `[SCORE_CLAMP, 1 - SCORE_CLAMP]` so the sigmoid
/// head stays strictly inside (0,1) even when the pre-activation saturates.
pub const SCORE_CLAMP: f64 = 1e-15;

/// Network shape and regularization settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub use_batchnorm: bool,
}

impl NetworkConfig {
    /// Default configuration for a given feature count: hidden layer of half
    /// the input size (at least one unit), dropout 0.5, batch norm on.
    pub fn new(input_dim: usize) -> Self {
        NetworkConfig {
            input_dim,
            hidden_dim: (input_dim / 2).max(1),
            dropout_rate: 0.5,
            use_batchnorm: true,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn with_batchnorm(mut self, on: bool) -> Self {
        self.use_batchnorm = on;
        self
    }

    pub fn with_hidden_dim(mut self, hidden_dim: usize) -> Self {
        self.hidden_dim = hidden_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be >= 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::InvalidConfig("hidden_dim must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate must lie in [0,1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Forward/eval mode flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Parameters and normalization statistics of the scorer.
///
/// `w1` is `[hidden_dim x input_dim]`, `w2` holds the single output row
/// `[hidden_dim]`. Running statistics belong to the model but are not
/// optimizer parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub config: NetworkConfig,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub bn_scale: Array1<f64>,
    pub bn_shift: Array1<f64>,
    pub bn_running_mean: Array1<f64>,
    pub bn_running_var: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
}

/// Gradients with the same shapes as the trainable parameters of [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub bn_scale: Array1<f64>,
    pub bn_shift: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
}

impl Gradients {
    pub fn zeros(config: &NetworkConfig) -> Self {
        Gradients {
            w1: Array2::zeros((config.hidden_dim, config.input_dim)),
            b1: Array1::zeros(config.hidden_dim),
            bn_scale: Array1::zeros(config.hidden_dim),
            bn_shift: Array1::zeros(config.hidden_dim),
            w2: Array1::zeros(config.hidden_dim),
            b2: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.bn_scale.iter().all(|v| v.is_finite())
            && self.bn_shift.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.b2.is_finite()
    }
}

/// Everything the backward pass needs from a forward call.
///
/// In eval mode the dropout mask is all ones and the stored statistics are
/// the running statistics.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub mode: Mode,
    input: Array2<f64>,
    /// Statistics used for normalization (batch stats in train mode,
    /// running stats in eval mode); `None` when batch norm is off.
    bn_mean: Option<Array1<f64>>,
    bn_var: Option<Array1<f64>>,
    inv_std: Option<Array1<f64>>,
    x_hat: Option<Array2<f64>>,
    relu_out: Array2<f64>,
    dropout_mask: Array2<f64>,
    keep_prob: f64,
    post_dropout: Array2<f64>,
    scores: Array1<f64>,
    input_dim: usize,
    hidden_dim: usize,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    pub fn scores(&self) -> &Array1<f64> {
        &self.scores
    }

    pub fn dropout_mask(&self) -> &Array2<f64> {
        &self.dropout_mask
    }

    pub fn bn_batch_mean(&self) -> Option<&Array1<f64>> {
        self.bn_mean.as_ref()
    }

    pub fn bn_batch_var(&self) -> Option<&Array1<f64>> {
        self.bn_var.as_ref()
    }
}

fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

impl MlpModel {
    /// Builds a model with fan-in-scaled uniform weights (He-style), unit
    /// batch-norm scale, zero shifts and biases, and fresh running
    /// statistics. Identical `(config, seed)` pairs produce bitwise-identical
    /// models.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<MlpModel> {
        config.validate()?;
        let mut rng = crate::seeded_rng(seed);
        let h = config.hidden_dim;
        let d = config.input_dim;

        let limit1 = (6.0 / d as f64).sqrt();
        let w1 = Array2::from_shape_fn((h, d), |_| rng.random_range(-limit1..limit1));
        let limit2 = (6.0 / h as f64).sqrt();
        let w2 = Array1::from_shape_fn(h, |_| rng.random_range(-limit2..limit2));

        Ok(MlpModel {
            config,
            w1,
            b1: Array1::zeros(h),
            bn_scale: Array1::ones(h),
            bn_shift: Array1::zeros(h),
            bn_running_mean: Array1::zeros(h),
            bn_running_var: Array1::ones(h),
            w2,
            b2: 0.0,
        })
    }

    fn check_batch(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.config.input_dim {
            return Err(Error::shape(
                format!("batch with {} columns", self.config.input_dim),
                format!("{} columns", batch.ncols()),
            ));
        }
        if batch.nrows() == 0 {
            return Err(Error::ContractViolation("empty batch".into()));
        }
        Ok(())
    }

    /// Runs the scoring chain `sigmoid(dense2(dropout(relu(bn(dense1(x))))))`.
    ///
    /// Train mode normalizes with batch statistics, updates the running
    /// statistics, and samples a fresh inverted-dropout mask from `rng`.
    /// Eval mode is a pure function of `(model, batch)` and ignores `rng`.
    pub fn forward(
        &mut self,
        batch: ArrayView2<f64>,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(Array1<f64>, ForwardCache)> {
        self.check_batch(&batch)?;
        let n = batch.nrows();
        if mode == Mode::Train && self.config.use_batchnorm && n < 2 {
            return Err(Error::ContractViolation(format!(
                "train-mode forward with batch norm requires batch size >= 2, got {n}"
            )));
        }

        let mask = if mode == Mode::Train && self.config.dropout_rate > 0.0 {
            let keep = 1.0 - self.config.dropout_rate;
            Some(Array2::from_shape_fn((n, self.config.hidden_dim), |_| {
                if rng.random::<f64>() < keep {
                    1.0
                } else {
                    0.0
                }
            }))
        } else {
            None
        };

        let cache = self.compute_forward(batch, mode, mask)?;
        if mode == Mode::Train && self.config.use_batchnorm {
            let mean = cache.bn_mean.as_ref().expect("train bn stats present");
            let var = cache.bn_var.as_ref().expect("train bn stats present");
            self.bn_running_mean = &self.bn_running_mean * (1.0 - BN_MOMENTUM) + mean * BN_MOMENTUM;
            self.bn_running_var = &self.bn_running_var * (1.0 - BN_MOMENTUM) + var * BN_MOMENTUM;
        }
        let scores = cache.scores.clone();
        Ok((scores, cache))
    }

    /// Eval-mode scoring without the cache; accepts batches of any size
    /// including a single row.
    pub fn predict_scores(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_batch(&batch)?;
        let cache = self.compute_forward(batch, Mode::Eval, None)?;
        Ok(cache.scores)
    }

    fn compute_forward(
        &self,
        batch: ArrayView2<f64>,
        mode: Mode,
        mask: Option<Array2<f64>>,
    ) -> Result<ForwardCache> {
        let n = batch.nrows();
        let h = self.config.hidden_dim;

        let z1 = batch.dot(&self.w1.t()) + &self.b1;

        let (pre_relu, bn_mean, bn_var, inv_std, x_hat) = if self.config.use_batchnorm {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = z1.mean_axis(Axis(0)).expect("nonempty batch");
                    // population variance: the same statistic feeds
                    // normalization and the running update
                    let var = z1.map_axis(Axis(0), |col| {
                        let m = col.sum() / col.len() as f64;
                        col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64
                    });
                    (mean, var)
                }
                Mode::Eval => (self.bn_running_mean.clone(), self.bn_running_var.clone()),
            };
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let x_hat = (&z1 - &mean) * &inv_std;
            let y = &x_hat * &self.bn_scale + &self.bn_shift;
            (y, Some(mean), Some(var), Some(inv_std), Some(x_hat))
        } else {
            (z1, None, None, None, None)
        };

        let relu_out = pre_relu.mapv(|v| v.max(0.0));

        let (post_dropout, dropout_mask, keep_prob) = match mask {
            Some(m) => {
                let keep = 1.0 - self.config.dropout_rate;
                let dropped = &relu_out * &m / keep;
                (dropped, m, keep)
            }
            None => (relu_out.clone(), Array2::ones((n, h)), 1.0),
        };

        let z2 = post_dropout.dot(&self.w2) + self.b2;
        let scores = z2.mapv(sigmoid);

        Ok(ForwardCache {
            mode,
            input: batch.to_owned(),
            bn_mean,
            bn_var,
            inv_std,
            x_hat,
            relu_out,
            dropout_mask,
            keep_prob,
            post_dropout,
            scores,
            input_dim: self.config.input_dim,
            hidden_dim: self.config.hidden_dim,
        })
    }

    /// Exact analytic gradients of `sum_i score_gradients[i] * scores[i]`
    /// with respect to every trainable parameter, backpropagated through the
    /// dropout mask and (in train mode) the batch-statistics pathway.
    pub fn backward(&self, cache: &ForwardCache, score_gradients: &[f64]) -> Result<Gradients> {
        if cache.input_dim != self.config.input_dim || cache.hidden_dim != self.config.hidden_dim {
            return Err(Error::ContractViolation(
                "forward cache does not match this model's dimensions".into(),
            ));
        }
        let n = cache.batch_size();
        if score_gradients.len() != n {
            return Err(Error::shape(
                format!("{n} score gradients"),
                format!("{}", score_gradients.len()),
            ));
        }

        let ds = Array1::from_iter(score_gradients.iter().copied());
        // sigmoid head: dz2 = ds * s * (1 - s)
        let dz2 = &ds * &cache.scores.mapv(|s| s * (1.0 - s));

        let db2 = dz2.sum();
        let dw2 = cache.post_dropout.t().dot(&dz2);

        // broadcast dz2 over the hidden dimension
        let dz2_col = dz2.view().insert_axis(Axis(1));
        let dh = &dz2_col * &self.w2;

        let da = &dh * &cache.dropout_mask / cache.keep_prob;
        let dy = &da * &cache.relu_out.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });

        let (dz1, d_scale, d_shift) = if self.config.use_batchnorm {
            let x_hat = cache.x_hat.as_ref().expect("bn cache present");
            let inv_std = cache.inv_std.as_ref().expect("bn cache present");
            let d_scale = (&dy * x_hat).sum_axis(Axis(0));
            let d_shift = dy.sum_axis(Axis(0));
            let dx_hat = &dy * &self.bn_scale;
            let dz1 = match cache.mode {
                Mode::Train => {
                    let m = n as f64;
                    let sum_dx_hat = dx_hat.sum_axis(Axis(0));
                    let sum_dx_hat_x_hat = (&dx_hat * x_hat).sum_axis(Axis(0));
                    let centered = &dx_hat * m - &sum_dx_hat - x_hat * &sum_dx_hat_x_hat;
                    centered * inv_std / m
                }
                Mode::Eval => &dx_hat * inv_std,
            };
            (dz1, d_scale, d_shift)
        } else {
            let h = self.config.hidden_dim;
            (dy, Array1::zeros(h), Array1::zeros(h))
        };

        let dw1 = dz1.t().dot(&cache.input);
        let db1 = dz1.sum_axis(Axis(0));

        Ok(Gradients {
            w1: dw1,
            b1: db1,
            bn_scale: d_scale,
            bn_shift: d_shift,
            w2: dw2,
            b2: db2,
        })
    }
}
