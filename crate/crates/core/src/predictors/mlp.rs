use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::logistic::sigmoid;
use crate::error::{check_dim, Result, ShapError};
use crate::rng::rng_from;
use crate::types::{Dataset, Predictor};

/// One tanh hidden layer followed by a sigmoid output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    /// `h × d`, row-major.
    pub hidden_weights: Vec<Vec<f64>>,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

struct Forward {
    hidden: DVector<f64>,
    p: f64,
}

impl MlpModel {
    pub fn new(
        hidden_weights: Vec<Vec<f64>>,
        hidden_bias: Vec<f64>,
        output_weights: Vec<f64>,
        output_bias: f64,
    ) -> Result<Self> {
        let h = hidden_weights.len();
        if h == 0 {
            return Err(ShapError::InvalidInput("MLP needs a hidden unit".into()));
        }
        let d = hidden_weights[0].len();
        for row in &hidden_weights {
            check_dim(d, row.len())?;
        }
        check_dim(h, hidden_bias.len())?;
        check_dim(h, output_weights.len())?;
        Ok(Self {
            hidden_weights,
            hidden_bias,
            output_weights,
            output_bias,
        })
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden_weights.len()
    }

    fn w1(&self) -> DMatrix<f64> {
        let h = self.n_hidden();
        let d = self.n_features();
        DMatrix::from_fn(h, d, |i, j| self.hidden_weights[i][j])
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let hidden = DVector::from_fn(self.n_hidden(), |i, _| {
            let pre: f64 = self.hidden_weights[i]
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum::<f64>()
                + self.hidden_bias[i];
            pre.tanh()
        });
        let z = hidden
            .iter()
            .zip(&self.output_weights)
            .map(|(a, w)| a * w)
            .sum::<f64>()
            + self.output_bias;
        Forward {
            hidden,
            p: sigmoid(z),
        }
    }

    /// Gradient of the output logit.
    fn logit_gradient(&self, fwd: &Forward) -> DVector<f64> {
        let scale = DVector::from_fn(self.n_hidden(), |i, _| {
            self.output_weights[i] * (1.0 - fwd.hidden[i] * fwd.hidden[i])
        });
        self.w1().transpose() * scale
    }
}

impl Predictor for MlpModel {
    fn n_features(&self) -> usize {
        self.hidden_weights[0].len()
    }

    fn predict_one(&self, x: &[f64]) -> f64 {
        self.forward(x).p
    }

    fn gradient(&self, x: &[f64]) -> Option<DVector<f64>> {
        let fwd = self.forward(x);
        let gz = self.logit_gradient(&fwd);
        Some(gz * (fwd.p * (1.0 - fwd.p)))
    }

    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let fwd = self.forward(x);
        let gz = self.logit_gradient(&fwd);
        let w1 = self.w1();
        // d²tanh(u)/du² = -2 tanh(u) (1 - tanh²(u))
        let curv = DVector::from_fn(self.n_hidden(), |i, _| {
            let a = fwd.hidden[i];
            self.output_weights[i] * (-2.0 * a * (1.0 - a * a))
        });
        let hz = w1.transpose() * DMatrix::from_diagonal(&curv) * &w1;
        let p = fwd.p;
        let h = hz * (p * (1.0 - p)) + &gz * gz.transpose() * (p * (1.0 - p) * (1.0 - 2.0 * p));
        Some(crate::linalg::symmetrize(&h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpTrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 50,
            learning_rate: 0.5,
            iterations: 1500,
            seed: 0,
        }
    }
}

/// Full-batch gradient descent on the log loss from a seeded Xavier-style start.
pub fn train_mlp(data: &Dataset, labels: &[f64], cfg: &MlpTrainConfig) -> Result<MlpModel> {
    let n = data.n_rows();
    let d = data.n_features();
    check_dim(n, labels.len())?;
    if cfg.hidden == 0 || cfg.iterations == 0 || cfg.learning_rate <= 0.0 {
        return Err(ShapError::Configuration("invalid MLP training configuration".into()));
    }
    let h = cfg.hidden;
    let mut rng = rng_from(cfg.seed);
    let s1 = (1.0 / d as f64).sqrt();
    let s2 = (1.0 / h as f64).sqrt();
    let mut w1 = DMatrix::from_fn(h, d, |_, _| s1 * rng.sample::<f64, _>(StandardNormal));
    let mut b1 = DVector::<f64>::zeros(h);
    let mut w2 = DVector::from_fn(h, |_, _| s2 * rng.sample::<f64, _>(StandardNormal));
    let mut b2 = 0.0;
    let x = data.rows();
    let y = DVector::from_column_slice(labels);
    let nf = n as f64;
    for _ in 0..cfg.iterations {
        // n × h pre-activations
        let mut a = x * w1.transpose();
        for mut row in a.row_iter_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v + b1[k]).tanh();
            }
        }
        let z = &a * &w2 + DVector::from_element(n, b2);
        let delta = DVector::from_fn(n, |i, _| (sigmoid(z[i]) - y[i]) / nf);
        let grad_w2 = a.transpose() * &delta;
        let grad_b2 = delta.sum();
        let mut back = &delta * w2.transpose();
        for i in 0..n {
            for k in 0..h {
                back[(i, k)] *= 1.0 - a[(i, k)] * a[(i, k)];
            }
        }
        let grad_w1 = back.transpose() * x;
        let grad_b1 = DVector::from_fn(h, |k, _| back.column(k).sum());
        w1 -= grad_w1 * cfg.learning_rate;
        b1 -= grad_b1 * cfg.learning_rate;
        w2 -= grad_w2 * cfg.learning_rate;
        b2 -= grad_b2 * cfg.learning_rate;
    }
    MlpModel::new(
        (0..h).map(|i| w1.row(i).iter().copied().collect()).collect(),
        b1.iter().copied().collect(),
        w2.iter().copied().collect(),
        b2,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MlpModel {
        MlpModel::new(
            vec![vec![0.7, -0.3, 0.2], vec![-0.5, 0.9, 0.4], vec![0.1, 0.2, -1.1]],
            vec![0.1, -0.2, 0.05],
            vec![1.3, -0.8, 0.6],
            0.2,
        )
        .unwrap()
    }

    #[test]
    fn rejects_mismatched_layers() {
        assert!(MlpModel::new(vec![vec![1.0, 2.0]], vec![0.0, 0.0], vec![1.0], 0.0).is_err());
    }

    #[test]
    fn hessian_is_symmetric() {
        let h = small().hessian(&[0.2, -0.4, 1.0]).unwrap();
        assert_eq!(crate::linalg::asymmetry(&h), 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let rows = DMatrix::from_row_slice(4, 2, &[-1.0, 0.0, -0.5, 1.0, 0.5, -1.0, 1.0, 0.0]);
        let data = Dataset::from_matrix(rows).unwrap();
        let cfg = MlpTrainConfig {
            hidden: 4,
            iterations: 50,
            ..Default::default()
        };
        let a = train_mlp(&data, &[0.0, 0.0, 1.0, 1.0], &cfg).unwrap();
        let b = train_mlp(&data, &[0.0, 0.0, 1.0, 1.0], &cfg).unwrap();
        assert_eq!(a, b);
        let p = a.predict_one(&[0.3, 0.3]);
        assert!(p > 0.0 && p < 1.0);
    }
}
