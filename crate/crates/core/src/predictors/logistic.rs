use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::linear::dot;
use crate::error::{check_dim, Result, ShapError};
use crate::types::{Dataset, Predictor};

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `p(x) = σ(wᵀx + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegressionModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticRegressionModel {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        Self { weights, bias }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

impl Predictor for LogisticRegressionModel {
    fn n_features(&self) -> usize {
        self.weights.len()
    }

    fn predict_one(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    fn gradient(&self, x: &[f64]) -> Option<DVector<f64>> {
        let p = self.predict_one(x);
        let w = DVector::from_column_slice(&self.weights);
        Some(w * (p * (1.0 - p)))
    }

    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let p = self.predict_one(x);
        let w = DVector::from_column_slice(&self.weights);
        Some(&w * w.transpose() * (p * (1.0 - p) * (1.0 - 2.0 * p)))
    }
}

/// Hyperparameters for full-batch gradient descent on the L2-penalized log loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticTrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Penalty on `‖w‖²/2`, scaled by `1/n`.
    pub l2: f64,
}

impl Default for LogisticTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            iterations: 2000,
            l2: 1.0,
        }
    }
}

/// Deterministic gradient-descent fit starting from zero weights.
pub fn train_logistic(
    data: &Dataset,
    labels: &[f64],
    cfg: &LogisticTrainConfig,
) -> Result<LogisticRegressionModel> {
    let n = data.n_rows();
    let d = data.n_features();
    check_dim(n, labels.len())?;
    if cfg.iterations == 0 || cfg.learning_rate <= 0.0 {
        return Err(ShapError::Configuration(
            "logistic training needs positive iterations and learning rate".into(),
        ));
    }
    let x = data.rows();
    let y = DVector::from_column_slice(labels);
    let mut w = DVector::zeros(d);
    let mut b = 0.0;
    let nf = n as f64;
    for _ in 0..cfg.iterations {
        let z = x * &w + DVector::from_element(n, b);
        let resid = DVector::from_fn(n, |i, _| sigmoid(z[i]) - y[i]);
        let grad_w = (x.transpose() * &resid + &w * cfg.l2) / nf;
        let grad_b = resid.sum() / nf;
        w -= grad_w * cfg.learning_rate;
        b -= grad_b * cfg.learning_rate;
    }
    Ok(LogisticRegressionModel::new(w.iter().copied().collect(), b))
}
