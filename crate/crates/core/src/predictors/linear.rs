use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, ShapError};
use crate::types::Predictor;

/// `f(x) = wᵀx + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        Self { weights, bias }
    }
}

impl Predictor for LinearModel {
    fn n_features(&self) -> usize {
        self.weights.len()
    }

    fn predict_one(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    fn gradient(&self, _x: &[f64]) -> Option<DVector<f64>> {
        Some(DVector::from_column_slice(&self.weights))
    }

    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        let d = self.weights.len();
        Some(DMatrix::zeros(d, d))
    }
}

/// `f(x) = c + bᵀx + ½ xᵀAx` with `A` symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticModel {
    pub constant: f64,
    pub linear: Vec<f64>,
    /// Row-major `d × d` symmetric matrix.
    pub quadratic: Vec<Vec<f64>>,
}

impl QuadraticModel {
    pub fn new(constant: f64, linear: Vec<f64>, quadratic: DMatrix<f64>) -> Result<Self> {
        let d = linear.len();
        check_dim(d, quadratic.nrows())?;
        check_dim(d, quadratic.ncols())?;
        if crate::linalg::asymmetry(&quadratic) > 1e-12 {
            return Err(ShapError::InvalidInput("quadratic term must be symmetric".into()));
        }
        let quadratic = (0..d)
            .map(|i| (0..d).map(|j| quadratic[(i, j)]).collect())
            .collect();
        Ok(Self {
            constant,
            linear,
            quadratic,
        })
    }

    pub fn quadratic_matrix(&self) -> DMatrix<f64> {
        let d = self.linear.len();
        DMatrix::from_fn(d, d, |i, j| self.quadratic[i][j])
    }
}

impl Predictor for QuadraticModel {
    fn n_features(&self) -> usize {
        self.linear.len()
    }

    fn predict_one(&self, x: &[f64]) -> f64 {
        let mut quad = 0.0;
        for (i, row) in self.quadratic.iter().enumerate() {
            quad += x[i] * dot(row, x);
        }
        self.constant + dot(&self.linear, x) + 0.5 * quad
    }

    fn gradient(&self, x: &[f64]) -> Option<DVector<f64>> {
        let d = self.linear.len();
        Some(DVector::from_fn(d, |i, _| {
            self.linear[i] + dot(&self.quadratic[i], x)
        }))
    }

    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.quadratic_matrix())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}
