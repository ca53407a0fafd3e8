//! End-to-end ControlSHAP explanation of one query point.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::{combine, ControlledEstimate};
use crate::error::{check_dim, Result, ShapError};
use crate::estimators::{kernelshap, shapley_sampling_all};
use crate::rng::child_seed;
use crate::taylor::{
    build_surrogate, linear_empty_value, linear_shapley, quadratic_empty_value, quadratic_shapley,
    DerivativeSource, DjPrecompute, TaylorSurrogate,
};
use crate::types::{Dataset, FeatureMoments, Predictor};
use crate::value::{CompletionSampler, SamplingMode, ValueFunction, ValueFunctionConfig};
use crate::variance::{
    ks_bootstrap_cov, ks_grouped_cov, ks_least_squares_cov, ss_cov, CovEstimate, VarianceMethod,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    ShapleySampling,
    Kernelshap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainerConfig {
    pub estimator: EstimatorKind,
    pub mode: SamplingMode,
    pub variance: VarianceMethod,
    /// Permutations (Shapley sampling) or coalitions (KernelSHAP).
    pub n_coalitions: usize,
    pub samples_per_coalition: usize,
    pub bootstrap_resamples: usize,
    pub groups: usize,
    /// Gaussian draws used to estimate `E[f(X)]` in correlated mode.
    pub n_reference: usize,
    pub reference_seed: u64,
}

impl ExplainerConfig {
    pub fn check(&self) -> Result<()> {
        let ss = self.estimator == EstimatorKind::ShapleySampling;
        if ss != (self.variance == VarianceMethod::SsEmpirical) {
            return Err(ShapError::Configuration(format!(
                "variance method {:?} does not apply to {:?}",
                self.variance, self.estimator
            )));
        }
        if self.n_coalitions < 2 || self.samples_per_coalition == 0 || self.n_reference == 0 {
            return Err(ShapError::Configuration(
                "coalition, sample and reference counts must be positive (M >= 2)".into(),
            ));
        }
        Ok(())
    }
}

/// Surrogate order used with each sampling mode: quadratic under marginal
/// sampling, linear under Gaussian conditioning.
pub fn surrogate_order(mode: SamplingMode) -> usize {
    match mode {
        SamplingMode::Independent => 2,
        SamplingMode::Correlated => 1,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub estimate: ControlledEstimate,
    pub covariances: Vec<CovEstimate>,
    pub f_x: f64,
    /// Estimate of `E[f(X)]`; Shapley values should sum to `f_x` minus this.
    pub v_empty_model: f64,
    pub hessian_excluded: Vec<usize>,
}

/// Surrogate at one query point with its exact Shapley values and `v(∅)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPoint {
    pub surrogate: TaylorSurrogate,
    pub hessian_excluded: Vec<usize>,
    pub exact_approx: DVector<f64>,
    pub empty_approx: f64,
}

/// Holds everything that does not depend on the query point.
pub struct Explainer<'a> {
    model: &'a dyn Predictor,
    sampler: CompletionSampler,
    dj: Option<DjPrecompute>,
    derivatives: DerivativeSource,
    cfg: ExplainerConfig,
    v_empty_model: f64,
}

impl<'a> Explainer<'a> {
    /// In independent mode completions come from `background` and the exact
    /// surrogate values use its empirical moments; `moments` is ignored. In
    /// correlated mode `moments` defines the Gaussian and `dj` must be given.
    pub fn new(
        model: &'a dyn Predictor,
        background: Option<&Dataset>,
        moments: Option<FeatureMoments>,
        dj: Option<DjPrecompute>,
        derivatives: DerivativeSource,
        cfg: ExplainerConfig,
    ) -> Result<Self> {
        cfg.check()?;
        let d = model.n_features();
        let sampler = match cfg.mode {
            SamplingMode::Independent => {
                let bg = background.ok_or_else(|| {
                    ShapError::Configuration("independent mode needs background data".into())
                })?;
                CompletionSampler::new(cfg.mode, bg.population_moments()?, Some(bg))?
            }
            SamplingMode::Correlated => {
                let m = moments.ok_or_else(|| {
                    ShapError::Configuration("correlated mode needs feature moments".into())
                })?;
                let dj = dj.as_ref().ok_or_else(|| {
                    ShapError::Configuration("correlated mode needs D_j matrices".into())
                })?;
                check_dim(m.dim(), dj.dim())?;
                CompletionSampler::new(cfg.mode, m, None)?
            }
        };
        check_dim(d, sampler.dim())?;
        let v_empty_model = sampler.expected_prediction(model, cfg.n_reference, cfg.reference_seed)?;
        Ok(Self {
            model,
            sampler,
            dj,
            derivatives,
            cfg,
            v_empty_model,
        })
    }

    pub fn config(&self) -> &ExplainerConfig {
        &self.cfg
    }

    pub fn moments(&self) -> &FeatureMoments {
        self.sampler.moments()
    }

    pub fn v_empty_model(&self) -> f64 {
        self.v_empty_model
    }

    pub fn sampler(&self) -> &CompletionSampler {
        &self.sampler
    }

    /// Builds the surrogate at `x` and its exact Shapley values.
    pub fn prepare(&self, x: &[f64]) -> Result<PreparedPoint> {
        let moments = self.sampler.moments();
        let built = build_surrogate(self.model, x, surrogate_order(self.cfg.mode), &self.derivatives)?;
        let g = &built.surrogate;
        let (exact_approx, empty_approx) = match self.cfg.mode {
            SamplingMode::Independent => (quadratic_shapley(g, moments)?, quadratic_empty_value(g, moments)?),
            SamplingMode::Correlated => {
                let dj = self.dj.as_ref().expect("checked in new");
                (linear_shapley(g, dj, moments)?, linear_empty_value(g, moments)?)
            }
        };
        Ok(PreparedPoint {
            surrogate: built.surrogate,
            hessian_excluded: built.hessian_excluded,
            exact_approx,
            empty_approx,
        })
    }

    /// Paired value function at a prepared point; completions are seeded by `seed`.
    pub fn value_function<'s>(&'s self, point: &'s PreparedPoint, seed: u64) -> Result<ValueFunction<'s>> {
        ValueFunction::new(
            self.model,
            &point.surrogate,
            &self.sampler,
            &ValueFunctionConfig {
                mode: self.cfg.mode,
                samples_per_coalition: self.cfg.samples_per_coalition,
                seed,
            },
        )
    }

    pub fn explain(&self, x: &[f64], seed: u64) -> Result<Explanation> {
        let cfg = &self.cfg;
        let point = self.prepare(x)?;
        let vf = self.value_function(&point, child_seed(seed, &[1]))?;
        let empty_approx = point.empty_approx;
        let exact_approx = &point.exact_approx;
        let draw_seed = child_seed(seed, &[2]);
        let (phi_model, phi_approx, covs) = match cfg.estimator {
            EstimatorKind::ShapleySampling => {
                let out = shapley_sampling_all(&vf, cfg.n_coalitions, draw_seed)?;
                let covs = out.increments.iter().map(ss_cov).collect::<Result<Vec<_>>>()?;
                (out.model.values, out.approx.values, covs)
            }
            EstimatorKind::Kernelshap => {
                let out = kernelshap(&vf, cfg.n_coalitions, draw_seed, self.v_empty_model, empty_approx)?;
                let covs = match cfg.variance {
                    VarianceMethod::KsBootstrap => ks_bootstrap_cov(
                        &out.draws,
                        &out.endpoints,
                        cfg.bootstrap_resamples,
                        child_seed(seed, &[3]),
                    )?,
                    VarianceMethod::KsLeastSquares => ks_least_squares_cov(&out.draws, &out.design)?,
                    VarianceMethod::KsGrouped => ks_grouped_cov(&out.draws, cfg.groups, &out.endpoints)?,
                    VarianceMethod::SsEmpirical => unreachable!("rejected by config check"),
                };
                (out.model.values, out.approx.values, covs)
            }
        };
        let estimate = combine(&phi_model, &phi_approx, exact_approx, &covs)?;
        Ok(Explanation {
            estimate,
            covariances: covs,
            f_x: vf.f_x(),
            v_empty_model: self.v_empty_model,
            hessian_excluded: point.hessian_excluded,
        })
    }
}
