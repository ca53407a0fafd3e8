//! The control-variate combination `φ̂^CV = φ̂^model − α̂ (φ̂^approx − φ^approx)`.

use nalgebra::DVector;

use crate::error::{check_dim, Result};
use crate::variance::CovEstimate;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlledEstimate {
    pub phi_cv: DVector<f64>,
    pub alpha: DVector<f64>,
    pub anticipated_rho2: DVector<f64>,
    /// Features where the surrogate estimate had (numerically) zero variance,
    /// so no correction was applied.
    pub degenerate: Vec<bool>,
    pub phi_model: DVector<f64>,
    pub phi_approx: DVector<f64>,
    pub exact_approx: DVector<f64>,
}

/// `ρ̂² = Cov² / (Var_model · Var_approx)` clipped to `[0, 1]`; `(0, true)`
/// when either variance is zero.
pub fn anticipated_reduction(c: &CovEstimate) -> (f64, bool) {
    let denom = c.var_model * c.var_approx;
    if !(denom > 0.0) {
        return (0.0, true);
    }
    ((c.cov * c.cov / denom).clamp(0.0, 1.0), false)
}

/// Applies the correction feature by feature with `α̂ = Cov / Var_approx`.
/// When `Var_approx <= 1e-12 · max(1, Var_model)` the feature is left
/// uncorrected.
pub fn combine(
    phi_model: &DVector<f64>,
    phi_approx: &DVector<f64>,
    exact_approx: &DVector<f64>,
    covs: &[CovEstimate],
) -> Result<ControlledEstimate> {
    let d = phi_model.len();
    check_dim(d, phi_approx.len())?;
    check_dim(d, exact_approx.len())?;
    check_dim(d, covs.len())?;
    let mut phi_cv = phi_model.clone();
    let mut alpha = DVector::zeros(d);
    let mut rho2 = DVector::zeros(d);
    let mut degenerate = vec![false; d];
    for j in 0..d {
        let c = &covs[j];
        rho2[j] = anticipated_reduction(c).0;
        if c.var_approx <= 1e-12 * c.var_model.max(1.0) {
            degenerate[j] = true;
            continue;
        }
        alpha[j] = c.cov / c.var_approx;
        phi_cv[j] -= alpha[j] * (phi_approx[j] - exact_approx[j]);
    }
    Ok(ControlledEstimate {
        phi_cv,
        alpha,
        anticipated_rho2: rho2,
        degenerate,
        phi_model: phi_model.clone(),
        phi_approx: phi_approx.clone(),
        exact_approx: exact_approx.clone(),
    })
}
