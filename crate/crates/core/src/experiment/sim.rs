//! The simulated ten-feature block-covariance classification task.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, ShapError};
use crate::predictors::LogisticRegressionModel;
use crate::rng::child_rng;
use crate::types::{Dataset, FeatureMoments, Predictor};

pub const SIM_DIM: usize = 10;
pub const PAIR_CORRELATION: f64 = 0.5;
pub const LINK_CORRELATION: f64 = 0.25;

/// Unit variances; features `(2i, 2i+1)` correlate at 0.5 and each odd
/// feature links to the next pair's first feature at 0.25, wrapping from the
/// last feature back to the first so every feature has exactly one 0.5 and
/// one 0.25 partner. Diagonally dominant, hence positive definite.
pub fn sim_covariance() -> DMatrix<f64> {
    let mut s = DMatrix::identity(SIM_DIM, SIM_DIM);
    for p in 0..SIM_DIM / 2 {
        let (a, b) = (2 * p, 2 * p + 1);
        s[(a, b)] = PAIR_CORRELATION;
        s[(b, a)] = PAIR_CORRELATION;
        let c = (b + 1) % SIM_DIM;
        s[(b, c)] = LINK_CORRELATION;
        s[(c, b)] = LINK_CORRELATION;
    }
    s
}

pub fn sim_moments() -> FeatureMoments {
    FeatureMoments::new(DVector::zeros(SIM_DIM), sim_covariance()).expect("valid covariance")
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub data: Dataset,
    pub labels: Vec<f64>,
    /// The logistic regression that generated the labels.
    pub true_model: LogisticRegressionModel,
}

/// `n` rows of `N(0, Σ)` features with Bernoulli labels from a logistic
/// regression whose coefficients are standard normal draws.
pub fn generate_sim_dataset(n: usize, seed: u64) -> Result<SimDataset> {
    if n < 2 {
        return Err(ShapError::InvalidInput("simulated dataset needs n >= 2".into()));
    }
    let l = sim_covariance()
        .cholesky()
        .expect("covariance is positive definite")
        .l();
    let mut coef_rng = child_rng(seed, &[0]);
    let beta: Vec<f64> = (0..SIM_DIM).map(|_| coef_rng.sample(StandardNormal)).collect();
    let true_model = LogisticRegressionModel::new(beta, 0.0);
    let mut rng = child_rng(seed, &[1]);
    let mut rows = DMatrix::zeros(n, SIM_DIM);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let z = DVector::from_fn(SIM_DIM, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &l * z;
        rows.row_mut(i).copy_from(&x.transpose());
        let p = true_model.predict_one(x.as_slice());
        labels.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
    }
    Ok(SimDataset {
        data: Dataset::from_matrix(rows)?,
        labels,
        true_model,
    })
}
