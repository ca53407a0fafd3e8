//! Variance and model/surrogate covariance of the Shapley estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapError};
use crate::estimators::{Endpoints, IncrementRecord, KernelDesign, KernelDraw, MAX_DESIGN_RETRIES};
use crate::rng::child_rng;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    SsEmpirical,
    KsBootstrap,
    KsLeastSquares,
    KsGrouped,
}

/// `Var(φ̂^model)`, `Var(φ̂^approx)` and their covariance for one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovEstimate {
    pub var_model: f64,
    pub var_approx: f64,
    pub cov: f64,
    pub method: VarianceMethod,
}

/// Sample variances (clamped at 0) and covariance, denominator `n - 1`.
fn sample_moments(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        vaa += dx * dx;
        vbb += dy * dy;
        vab += dx * dy;
    }
    let k = n - 1.0;
    (vaa / k, vbb / k, vab / k)
}

/// `Var(G)/M` and `Cov(G^model, G^approx)/M` from the permutation increments.
pub fn ss_cov(increments: &IncrementRecord) -> Result<CovEstimate> {
    let m = increments.len();
    if m < 2 || increments.approx.len() != m {
        return Err(ShapError::InsufficientData(format!(
            "need at least 2 paired increments, got {m}"
        )));
    }
    let (vm, va, c) = sample_moments(&increments.model, &increments.approx);
    let m = m as f64;
    Ok(CovEstimate {
        var_model: vm / m,
        var_approx: va / m,
        cov: c / m,
        method: VarianceMethod::SsEmpirical,
    })
}

fn per_feature(reps_model: &[Vec<f64>], reps_approx: &[Vec<f64>], d: usize, scale: f64, method: VarianceMethod) -> Vec<CovEstimate> {
    (0..d)
        .map(|j| {
            let a: Vec<f64> = reps_model.iter().map(|r| r[j]).collect();
            let b: Vec<f64> = reps_approx.iter().map(|r| r[j]).collect();
            let (vm, va, c) = sample_moments(&a, &b);
            CovEstimate {
                var_model: vm * scale,
                var_approx: va * scale,
                cov: c * scale,
                method,
            }
        })
        .collect()
}

fn paired_solve(draws: &[&KernelDraw], ends: &Endpoints) -> Result<(Vec<f64>, Vec<f64>)> {
    let coalitions: Vec<_> = draws.iter().map(|r| r.coalition.clone()).collect();
    let design = KernelDesign::new(&coalitions)?;
    let vm: Vec<f64> = draws.iter().map(|r| r.v_model).collect();
    let va: Vec<f64> = draws.iter().map(|r| r.v_approx).collect();
    Ok((
        design.solve(&vm, ends.empty_model, ends.full_model)?.as_slice().to_vec(),
        design.solve(&va, ends.empty_approx, ends.full_approx)?.as_slice().to_vec(),
    ))
}

/// Bootstrap over coalitions: `b` replicate solves on draws resampled with
/// replacement (both streams move together), then per-feature sample moments.
pub fn ks_bootstrap_cov(draws: &[KernelDraw], ends: &Endpoints, b: usize, seed: u64) -> Result<Vec<CovEstimate>> {
    if b < 2 {
        return Err(ShapError::Configuration("bootstrap needs B >= 2".into()));
    }
    let m = draws.len();
    let d = draws
        .first()
        .map(|r| r.coalition.dim())
        .ok_or_else(|| ShapError::InsufficientData("no draws".into()))?;
    let mut reps_model = Vec::with_capacity(b);
    let mut reps_approx = Vec::with_capacity(b);
    for rep in 0..b {
        let mut rng = child_rng(seed, &[rep as u64]);
        let mut solved = None;
        let mut last = None;
        for _ in 0..MAX_DESIGN_RETRIES {
            let pick: Vec<&KernelDraw> = (0..m).map(|_| &draws[rng.random_range(0..m)]).collect();
            match paired_solve(&pick, ends) {
                Ok(s) => {
                    solved = Some(s);
                    break;
                }
                Err(ShapError::DegenerateDesign(e)) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        let Some((pm, pa)) = solved else {
            return Err(ShapError::DegenerateDesign(format!(
                "bootstrap replicate {rep} stayed singular: {}",
                last.unwrap_or_default()
            )));
        };
        reps_model.push(pm);
        reps_approx.push(pa);
    }
    Ok(per_feature(&reps_model, &reps_approx, d, 1.0, VarianceMethod::KsBootstrap))
}

/// Propagates per-coalition value noise through the linear map `A(Z)`:
/// `Var(φ̂_j) ≈ Σ_m A_jm² s²_m` with `s²_m` the variance of the `m`-th
/// coalition's mean value (and likewise for the covariance).
pub fn ks_least_squares_cov(draws: &[KernelDraw], design: &KernelDesign) -> Result<Vec<CovEstimate>> {
    let a = design.a();
    crate::error::check_dim(a.ncols(), draws.len())?;
    let mut s_model = Vec::with_capacity(draws.len());
    let mut s_approx = Vec::with_capacity(draws.len());
    let mut s_cross = Vec::with_capacity(draws.len());
    for r in draws {
        let n = r.per_sample_model.len();
        if n < 2 {
            return Err(ShapError::InsufficientData(
                "least-squares variance needs at least 2 samples per coalition".into(),
            ));
        }
        let (vm, va, c) = sample_moments(&r.per_sample_model, &r.per_sample_approx);
        let n = n as f64;
        s_model.push(vm / n);
        s_approx.push(va / n);
        s_cross.push(c / n);
    }
    Ok((0..a.nrows())
        .map(|j| {
            let row = a.row(j);
            let mut est = CovEstimate {
                var_model: 0.0,
                var_approx: 0.0,
                cov: 0.0,
                method: VarianceMethod::KsLeastSquares,
            };
            for (m, w) in row.iter().enumerate() {
                let w2 = w * w;
                est.var_model += w2 * s_model[m];
                est.var_approx += w2 * s_approx[m];
                est.cov += w2 * s_cross[m];
            }
            est
        })
        .collect())
}

/// Splits the draws into `k` consecutive groups, solves each, and reports the
/// across-group variance divided by `k`.
pub fn ks_grouped_cov(draws: &[KernelDraw], k: usize, ends: &Endpoints) -> Result<Vec<CovEstimate>> {
    let d = draws
        .first()
        .map(|r| r.coalition.dim())
        .ok_or_else(|| ShapError::InsufficientData("no draws".into()))?;
    if k < 2 {
        return Err(ShapError::Configuration("grouped variance needs K >= 2".into()));
    }
    let size = draws.len() / k;
    if size < d + 2 {
        return Err(ShapError::Configuration(format!(
            "{} draws in {k} groups leaves {size} per group, need at least {}",
            draws.len(),
            d + 2
        )));
    }
    let mut reps_model = Vec::with_capacity(k);
    let mut reps_approx = Vec::with_capacity(k);
    for g in 0..k {
        let group: Vec<&KernelDraw> = draws[g * size..(g + 1) * size].iter().collect();
        let (pm, pa) = paired_solve(&group, ends)?;
        reps_model.push(pm);
        reps_approx.push(pa);
    }
    Ok(per_feature(&reps_model, &reps_approx, d, 1.0 / k as f64, VarianceMethod::KsGrouped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_moments() {
        let rec = IncrementRecord {
            model: vec![0.0, 1.0],
            approx: vec![0.0, 2.0],
        };
        let c = ss_cov(&rec).unwrap();
        assert!((c.var_model - 0.25).abs() < 1e-15);
        assert!((c.var_approx - 1.0).abs() < 1e-15);
        assert!((c.cov - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_increments() {
        let rec = IncrementRecord {
            model: vec![3.0; 5],
            approx: vec![1.0; 5],
        };
        let c = ss_cov(&rec).unwrap();
        assert_eq!((c.var_model, c.var_approx, c.cov), (0.0, 0.0, 0.0));
    }

    #[test]
    fn single_increment_rejected() {
        let rec = IncrementRecord {
            model: vec![1.0],
            approx: vec![1.0],
        };
        assert!(matches!(ss_cov(&rec), Err(ShapError::InsufficientData(_))));
    }
}
