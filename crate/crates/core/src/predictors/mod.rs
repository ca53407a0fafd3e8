//! Built-in predictors, their trainers, and finite-difference derivatives.

mod finite_diff;
mod linear;
mod logistic;
mod mlp;
mod tree;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use finite_diff::{fd_gradient, fd_hessian, FiniteDifferenceConfig, HessianEstimate};
pub use linear::{LinearModel, QuadraticModel};
pub use logistic::{train_logistic, LogisticRegressionModel, LogisticTrainConfig};
pub use mlp::{train_mlp, MlpModel, MlpTrainConfig};
pub use tree::{train_random_forest, DecisionTree, ForestTrainConfig, TreeEnsembleModel, TreeNode};

use crate::error::{check_dim, Result, ShapError};
use crate::types::Predictor;

/// Any built-in model. Serializes to the model JSON schema, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Linear(LinearModel),
    Quadratic(QuadraticModel),
    Logistic(LogisticRegressionModel),
    Mlp(MlpModel),
    TreeEnsemble(TreeEnsembleModel),
}

impl Model {
    fn inner(&self) -> &dyn Predictor {
        match self {
            Model::Linear(m) => m,
            Model::Quadratic(m) => m,
            Model::Logistic(m) => m,
            Model::Mlp(m) => m,
            Model::TreeEnsemble(m) => m,
        }
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let model: Model = serde_json::from_reader(std::fs::File::open(path)?)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Re-checks structural invariants after deserialization.
    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Linear(_) | Model::Logistic(_) => Ok(()),
            Model::Quadratic(q) => {
                QuadraticModel::new(q.constant, q.linear.clone(), q.quadratic_matrix()).map(|_| ())
            }
            Model::Mlp(m) => MlpModel::new(
                m.hidden_weights.clone(),
                m.hidden_bias.clone(),
                m.output_weights.clone(),
                m.output_bias,
            )
            .map(|_| ()),
            Model::TreeEnsemble(t) => TreeEnsembleModel::new(t.n_features, t.trees.clone()).map(|_| ()),
        }
    }
}

impl Predictor for Model {
    fn n_features(&self) -> usize {
        self.inner().n_features()
    }

    fn predict_one(&self, x: &[f64]) -> f64 {
        self.inner().predict_one(x)
    }

    fn gradient(&self, x: &[f64]) -> Option<DVector<f64>> {
        self.inner().gradient(x)
    }

    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        self.inner().hessian(x)
    }
}

pub fn analytic_gradient(model: &dyn Predictor, x: &[f64]) -> Result<DVector<f64>> {
    check_dim(model.n_features(), x.len())?;
    model
        .gradient(x)
        .ok_or_else(|| ShapError::Capability("model has no analytic gradient".into()))
}

pub fn analytic_hessian(model: &dyn Predictor, x: &[f64]) -> Result<DMatrix<f64>> {
    check_dim(model.n_features(), x.len())?;
    model
        .hessian(x)
        .ok_or_else(|| ShapError::Capability("model has no analytic Hessian".into()))
}
