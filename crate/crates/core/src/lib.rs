//! Shapley value estimation with Taylor-surrogate control variates.
//!
//! Monte Carlo Shapley estimates (permutation sampling and KernelSHAP) are
//! computed for the model and for a first- or second-order Taylor expansion
//! of it on the same random coalitions and completions. The expansion's exact
//! Shapley values are known in closed form, so the difference between its
//! estimate and its exact value is a zero-mean control variate that cancels
//! much of the model estimate's noise.

pub mod control;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod explainer;
pub mod linalg;
pub mod oracle;
pub mod predictors;
pub mod rng;
pub mod taylor;
pub mod types;
pub mod value;
pub mod variance;

pub use error::{Result, ShapError};
pub use types::{Coalition, Dataset, FeatureMoments, Predictor, ShapleyEstimate};
