//! Finite-difference derivatives for models without analytic ones.
//!
//! Numeric columns use central differences with a per-feature step (by
//! default the marginal standard deviation, so the resulting Taylor surrogate
//! tracks the model over realistic moves rather than infinitesimal ones).
//! One-hot blocks use a swap derivative: the partial for an inactive level
//! `c` is `f(x with level c active) - f(x)`, and 0 for the active level.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result, ShapError};
use crate::types::{validate_groups, Dataset, Predictor};

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDifferenceConfig {
    pub step_sizes: Vec<f64>,
    pub categorical_groups: Vec<Vec<usize>>,
}

impl FiniteDifferenceConfig {
    pub fn new(step_sizes: Vec<f64>, categorical_groups: Vec<Vec<usize>>) -> Result<Self> {
        validate_groups(&categorical_groups, step_sizes.len())?;
        Ok(Self {
            step_sizes,
            categorical_groups,
        })
    }

    /// Uniform step on every column, no categorical groups.
    pub fn uniform(d: usize, step: f64) -> Self {
        Self {
            step_sizes: vec![step; d],
            categorical_groups: Vec::new(),
        }
    }

    /// Steps equal to each column's marginal standard deviation. A constant
    /// column falls back to a unit step.
    pub fn from_dataset(data: &Dataset) -> Self {
        let steps = data
            .marginal_std()
            .into_iter()
            .map(|s| if s > 0.0 { s } else { 1.0 })
            .collect();
        Self {
            step_sizes: steps,
            categorical_groups: data.categorical_groups().to_vec(),
        }
    }

    /// Steps scaled by `factor`; used when validating against analytic derivatives.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            step_sizes: self.step_sizes.iter().map(|s| s * factor).collect(),
            categorical_groups: self.categorical_groups.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.step_sizes.len()
    }

    fn categorical_columns(&self) -> Vec<bool> {
        let mut cat = vec![false; self.dim()];
        for g in &self.categorical_groups {
            for &c in g {
                cat[c] = true;
            }
        }
        cat
    }

    fn check(&self, d: usize) -> Result<Vec<bool>> {
        check_dim(d, self.dim())?;
        let cat = self.categorical_columns();
        for (j, &h) in self.step_sizes.iter().enumerate() {
            if !cat[j] && !(h > 0.0 && h.is_finite()) {
                return Err(ShapError::Configuration(format!(
                    "step size for feature {j} must be positive, got {h}"
                )));
            }
        }
        Ok(cat)
    }
}

/// Finite-difference Hessian plus the columns left out of it.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianEstimate {
    pub hessian: DMatrix<f64>,
    /// One-hot columns whose rows and columns are zeroed; the swap derivative
    /// has no second-order counterpart.
    pub excluded_columns: Vec<usize>,
}

fn active_level(x: &[f64], group: &[usize]) -> Result<usize> {
    let active: Vec<usize> = group.iter().copied().filter(|&c| x[c] == 1.0).collect();
    match active.as_slice() {
        [a] => Ok(*a),
        _ => Err(ShapError::InvalidInput(format!(
            "point has {} active levels in one-hot group {group:?}",
            active.len()
        ))),
    }
}

pub fn fd_gradient(
    model: &dyn Predictor,
    x: &[f64],
    cfg: &FiniteDifferenceConfig,
) -> Result<DVector<f64>> {
    let d = model.n_features();
    check_dim(d, x.len())?;
    let cat = cfg.check(d)?;
    let mut grad = DVector::zeros(d);
    let mut probe = x.to_vec();
    for j in (0..d).filter(|&j| !cat[j]) {
        let h = cfg.step_sizes[j];
        probe[j] = x[j] + h;
        let up = model.predict_one(&probe);
        probe[j] = x[j] - h;
        let down = model.predict_one(&probe);
        probe[j] = x[j];
        grad[j] = (up - down) / (2.0 * h);
    }
    if !cfg.categorical_groups.is_empty() {
        let fx = model.predict_one(x);
        for group in &cfg.categorical_groups {
            let a = active_level(x, group)?;
            for &c in group.iter().filter(|&&c| c != a) {
                probe[a] = 0.0;
                probe[c] = 1.0;
                grad[c] = model.predict_one(&probe) - fx;
                probe[c] = x[c];
                probe[a] = x[a];
            }
        }
    }
    Ok(grad)
}

pub fn fd_hessian(
    model: &dyn Predictor,
    x: &[f64],
    cfg: &FiniteDifferenceConfig,
) -> Result<HessianEstimate> {
    let d = model.n_features();
    check_dim(d, x.len())?;
    let cat = cfg.check(d)?;
    let numeric: Vec<usize> = (0..d).filter(|&j| !cat[j]).collect();
    let fx = model.predict_one(x);
    let mut hess = DMatrix::zeros(d, d);
    let mut probe = x.to_vec();
    let mut eval = |moves: &[(usize, f64)]| {
        for &(j, dx) in moves {
            probe[j] += dx;
        }
        let v = model.predict_one(&probe);
        for &(j, _) in moves {
            probe[j] = x[j];
        }
        v
    };
    for (a, &i) in numeric.iter().enumerate() {
        let hi = cfg.step_sizes[i];
        let up = eval(&[(i, hi)]);
        let down = eval(&[(i, -hi)]);
        hess[(i, i)] = (up - 2.0 * fx + down) / (hi * hi);
        for &j in &numeric[a + 1..] {
            let hj = cfg.step_sizes[j];
            let pp = eval(&[(i, hi), (j, hj)]);
            let pm = eval(&[(i, hi), (j, -hj)]);
            let mp = eval(&[(i, -hi), (j, hj)]);
            let mm = eval(&[(i, -hi), (j, -hj)]);
            let v = (pp - pm - mp + mm) / (4.0 * hi * hj);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let excluded = (0..d).filter(|&j| cat[j]).collect();
    Ok(HessianEstimate {
        hessian: crate::linalg::symmetrize(&hess),
        excluded_columns: excluded,
    })
}
