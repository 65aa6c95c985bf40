//! Adam optimizer over the scorer's parameter tensors.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::nn::{Gradients, MlpModel, NetworkConfig};

/// First/second-moment accumulators plus the step counter. Moments share the
/// parameter shapes and start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    m: Gradients,
    v: Gradients,
}

impl OptimizerState {
    /// Standard settings used throughout training: lr 0.01, betas (0.9,
    /// 0.999), epsilon 1e-8.
    pub fn new(config: &NetworkConfig) -> Self {
        OptimizerState::with_learning_rate(config, 0.01)
    }

    pub fn with_learning_rate(config: &NetworkConfig, learning_rate: f64) -> Self {
        OptimizerState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: Gradients::zeros(config),
            v: Gradients::zeros(config),
        }
    }

    /// One bias-corrected Adam update applied in place to every trainable
    /// tensor (running statistics are untouched). Rejects non-finite
    /// gradients before mutating anything.
    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient passed to optimizer step".into()));
        }
        if grads.w1.dim() != model.w1.dim() || grads.w2.len() != model.w2.len() {
            return Err(Error::shape(
                format!("gradients shaped like a {:?} model", model.w1.dim()),
                format!("{:?}", grads.w1.dim()),
            ));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let (lr, b1, b2, eps) = (self.learning_rate, self.beta1, self.beta2, self.epsilon);

        let scalar = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };

        let update1 = |p: &mut Array1<f64>, g: &Array1<f64>, m: &mut Array1<f64>, v: &mut Array1<f64>| {
            for i in 0..p.len() {
                scalar(&mut p[i], g[i], &mut m[i], &mut v[i]);
            }
        };
        let update2 = |p: &mut Array2<f64>, g: &Array2<f64>, m: &mut Array2<f64>, v: &mut Array2<f64>| {
            for ((p, g), (m, v)) in p.iter_mut().zip(g.iter()).zip(m.iter_mut().zip(v.iter_mut())) {
                scalar(p, *g, m, v);
            }
        };

        update2(&mut model.w1, &grads.w1, &mut self.m.w1, &mut self.v.w1);
        update1(&mut model.b1, &grads.b1, &mut self.m.b1, &mut self.v.b1);
        update1(&mut model.bn_scale, &grads.bn_scale, &mut self.m.bn_scale, &mut self.v.bn_scale);
        update1(&mut model.bn_shift, &grads.bn_shift, &mut self.m.bn_shift, &mut self.v.bn_shift);
        update1(&mut model.w2, &grads.w2, &mut self.m.w2, &mut self.v.w2);
        scalar(&mut model.b2, grads.b2, &mut self.m.b2, &mut self.v.b2);
        Ok(())
    }
}
