//! Coalition value functions `v_x(S) = Ê[f(X) | X_S = x_S]`.
//!
//! Absent features are completed either from background rows (independent
//! mode) or from the Gaussian conditional `X_S̄ | X_S = x_S` (correlated mode).
//! The model and its Taylor surrogate are always evaluated on the same
//! completed points.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, ShapError};
use crate::linalg::{psd_factor, spd_inverse, submatrix, subvector, symmetrize};
use crate::rng::{child_rng, rng_from};
use crate::taylor::TaylorSurrogate;
use crate::types::{Coalition, Dataset, FeatureMoments, Predictor};

/// Dimension up to which conditional factors are memoized per coalition.
const CACHE_MAX_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Independent,
    Correlated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueFunctionConfig {
    pub mode: SamplingMode,
    pub samples_per_coalition: usize,
    pub seed: u64,
}

/// Model and surrogate values of one coalition, with the per-sample outputs
/// they average.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedValue {
    pub v_model: f64,
    pub v_approx: f64,
    pub per_sample_model: Vec<f64>,
    pub per_sample_approx: Vec<f64>,
}

/// Mean and covariance of `X_S̄ | X_S = x_S` under `N(μ, Σ)`.
pub fn conditional_gaussian(
    moments: &FeatureMoments,
    s: &Coalition,
    x: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = moments.dim();
    check_dim(d, s.dim())?;
    check_dim(d, x.len())?;
    let inside = s.indices();
    let outside = s.complement();
    let mu = moments.mu();
    let sigma = moments.sigma();
    let mu_out = subvector(mu, &outside);
    let sigma_out = submatrix(sigma, &outside, &outside);
    if inside.is_empty() || outside.is_empty() {
        return Ok((mu_out, sigma_out));
    }
    let cross = submatrix(sigma, &outside, inside);
    let coef = &cross * spd_inverse(&submatrix(sigma, inside, inside))?;
    let shift = subvector(x, inside) - subvector(mu, inside);
    let mean = mu_out + &coef * shift;
    let cov = symmetrize(&(sigma_out - &coef * cross.transpose()));
    Ok((mean, cov))
}

/// Exact `E[βᵀX + b | X_S = x_S]` under the Gaussian model.
pub fn exact_value_linear(
    beta: &DVector<f64>,
    b: f64,
    s: &Coalition,
    x: &DVector<f64>,
    moments: &FeatureMoments,
) -> Result<f64> {
    check_dim(moments.dim(), beta.len())?;
    let (mean, _) = conditional_gaussian(moments, s, x)?;
    let known: f64 = s.indices().iter().map(|&i| beta[i] * x[i]).sum();
    let filled: f64 = s
        .complement()
        .iter()
        .zip(mean.iter())
        .map(|(&i, m)| beta[i] * m)
        .sum();
    Ok(known + filled + b)
}

/// Exact value of the quadratic surrogate when `X_S̄` is drawn from its
/// marginal distribution:
/// `f(x) + δᵀJ_S̄ + ½[tr(H_S̄S̄ Σ_S̄S̄) + δᵀH_S̄S̄ δ]` with `δ = μ_S̄ - x_S̄`.
pub fn exact_value_quadratic(
    jacobian: &DVector<f64>,
    hessian: &DMatrix<f64>,
    f_x: f64,
    s: &Coalition,
    x: &DVector<f64>,
    moments: &FeatureMoments,
) -> Result<f64> {
    let d = moments.dim();
    check_dim(d, jacobian.len())?;
    check_dim(d, hessian.nrows())?;
    check_dim(d, x.len())?;
    check_dim(d, s.dim())?;
    let out = s.complement();
    let delta = subvector(moments.mu(), &out) - subvector(x, &out);
    let j = subvector(jacobian, &out);
    let h = submatrix(hessian, &out, &out);
    let sig = submatrix(moments.sigma(), &out, &out);
    let trace = (&h * sig).trace();
    let quad = delta.dot(&(&h * &delta));
    Ok(f_x + delta.dot(&j) + 0.5 * (trace + quad))
}

#[derive(Debug)]
struct ConditionalFactor {
    inside: Vec<usize>,
    outside: Vec<usize>,
    /// `Σ_S̄S Σ_SS⁻¹`.
    coef: DMatrix<f64>,
    /// `L` with `L Lᵀ` the eigenvalue-clipped conditional covariance.
    factor: DMatrix<f64>,
}

impl ConditionalFactor {
    fn build(moments: &FeatureMoments, s: &Coalition) -> Result<Self> {
        let inside = s.indices().to_vec();
        let outside = s.complement();
        let sigma = moments.sigma();
        let sigma_out = submatrix(sigma, &outside, &outside);
        let (coef, cov) = if inside.is_empty() {
            (DMatrix::zeros(outside.len(), 0), sigma_out)
        } else {
            let cross = submatrix(sigma, &outside, &inside);
            let coef = &cross * spd_inverse(&submatrix(sigma, &inside, &inside))?;
            let cov = sigma_out - &coef * cross.transpose();
            (coef, cov)
        };
        Ok(Self {
            inside,
            outside,
            coef,
            factor: psd_factor(&cov),
        })
    }

    fn fill<R: Rng + ?Sized>(&self, mu: &DVector<f64>, point: &mut [f64], z: &mut [f64], rng: &mut R) {
        let m = self.outside.len();
        for v in z[..m].iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for (a, &r) in self.outside.iter().enumerate() {
            let mut v = mu[r];
            for (b, &c) in self.inside.iter().enumerate() {
                v += self.coef[(a, b)] * (point[c] - mu[c]);
            }
            for (k, zk) in z[..m].iter().enumerate() {
                v += self.factor[(a, k)] * zk;
            }
            point[r] = v;
        }
    }
}

/// Draws `X_S̄ | X_S = x_S` from `N(μ, Σ)`, memoizing the per-coalition
/// regression and covariance factor (they do not depend on `x`).
#[derive(Debug)]
pub struct GaussianConditioner {
    moments: FeatureMoments,
    cache: Vec<OnceLock<std::result::Result<Arc<ConditionalFactor>, String>>>,
}

impl GaussianConditioner {
    pub fn new(moments: FeatureMoments) -> Self {
        let d = moments.dim();
        let slots = if d <= CACHE_MAX_DIM { 1usize << d } else { 0 };
        Self {
            moments,
            cache: (0..slots).map(|_| OnceLock::new()).collect(),
        }
    }

    fn factor(&self, s: &Coalition) -> Result<Arc<ConditionalFactor>> {
        if self.cache.is_empty() {
            return ConditionalFactor::build(&self.moments, s).map(Arc::new);
        }
        self.cache[s.bits() as usize]
            .get_or_init(|| {
                ConditionalFactor::build(&self.moments, s)
                    .map(Arc::new)
                    .map_err(|e| e.to_string())
            })
            .clone()
            .map_err(ShapError::Linalg)
    }
}

/// Source of completions for absent features, shared across query points.
#[derive(Debug)]
pub struct CompletionSampler {
    mode: SamplingMode,
    moments: FeatureMoments,
    /// Row-major background rows (independent mode).
    background: Vec<f64>,
    n_background: usize,
    conditioner: Option<GaussianConditioner>,
}

impl CompletionSampler {
    /// Independent mode requires background data; correlated mode only uses moments.
    pub fn new(mode: SamplingMode, moments: FeatureMoments, background: Option<&Dataset>) -> Result<Self> {
        let d = moments.dim();
        match mode {
            SamplingMode::Independent => {
                let bg = background.ok_or_else(|| {
                    ShapError::Configuration("independent mode needs background data".into())
                })?;
                check_dim(d, bg.n_features())?;
                let n = bg.n_rows();
                let rows = bg.rows();
                let mut flat = Vec::with_capacity(n * d);
                for i in 0..n {
                    for j in 0..d {
                        flat.push(rows[(i, j)]);
                    }
                }
                Ok(Self {
                    mode,
                    moments,
                    background: flat,
                    n_background: n,
                    conditioner: None,
                })
            }
            SamplingMode::Correlated => Ok(Self {
                mode,
                conditioner: Some(GaussianConditioner::new(moments.clone())),
                moments,
                background: Vec::new(),
                n_background: 0,
            }),
        }
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    pub fn moments(&self) -> &FeatureMoments {
        &self.moments
    }

    pub fn dim(&self) -> usize {
        self.moments.dim()
    }

    /// Writes `n` completed points into `out` (row-major, `n × d`), each a copy
    /// of `x` with its `S̄` coordinates replaced by a draw.
    pub fn complete<R: Rng + ?Sized>(
        &self,
        s: &Coalition,
        x: &[f64],
        n: usize,
        rng: &mut R,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        let d = self.dim();
        check_dim(d, x.len())?;
        check_dim(d, s.dim())?;
        out.clear();
        out.reserve(n * d);
        match self.mode {
            SamplingMode::Independent => {
                let missing = s.complement();
                for _ in 0..n {
                    let start = out.len();
                    out.extend_from_slice(x);
                    let r = rng.random_range(0..self.n_background);
                    let row = &self.background[r * d..(r + 1) * d];
                    for &j in &missing {
                        out[start + j] = row[j];
                    }
                }
            }
            SamplingMode::Correlated => {
                let cond = self.conditioner.as_ref().expect("correlated sampler");
                let factor = cond.factor(s)?;
                let mut z = vec![0.0; d];
                for _ in 0..n {
                    let start = out.len();
                    out.extend_from_slice(x);
                    factor.fill(self.moments.mu(), &mut out[start..start + d], &mut z, rng);
                }
            }
        }
        Ok(())
    }

    /// `E[f(X)]` estimate used as `v_x(∅)` in the KernelSHAP constraint: the
    /// mean prediction over all background rows (independent mode) or over
    /// `n_reference` seeded draws from `N(μ, Σ)` (correlated mode).
    pub fn expected_prediction(&self, model: &dyn Predictor, n_reference: usize, seed: u64) -> Result<f64> {
        let d = self.dim();
        check_dim(d, model.n_features())?;
        match self.mode {
            SamplingMode::Independent => {
                let total: f64 = self
                    .background
                    .chunks_exact(d)
                    .map(|row| model.predict_one(row))
                    .sum();
                Ok(total / self.n_background as f64)
            }
            SamplingMode::Correlated => {
                if n_reference == 0 {
                    return Err(ShapError::Configuration("n_reference must be positive".into()));
                }
                let mut rng = rng_from(seed);
                let mut buf = Vec::new();
                let x = self.moments.mu().as_slice().to_vec();
                self.complete(&Coalition::empty(d), &x, n_reference, &mut rng, &mut buf)?;
                let total: f64 = buf.chunks_exact(d).map(|row| model.predict_one(row)).sum();
                Ok(total / n_reference as f64)
            }
        }
    }
}

/// `v_x(·)` for one query point, pairing the model with its surrogate.
pub struct ValueFunction<'a> {
    model: &'a dyn Predictor,
    surrogate: &'a TaylorSurrogate,
    sampler: &'a CompletionSampler,
    x: Vec<f64>,
    f_x: f64,
    samples: usize,
    seed: u64,
}

impl<'a> ValueFunction<'a> {
    /// The query point is the surrogate's expansion center.
    pub fn new(
        model: &'a dyn Predictor,
        surrogate: &'a TaylorSurrogate,
        sampler: &'a CompletionSampler,
        cfg: &ValueFunctionConfig,
    ) -> Result<Self> {
        let d = sampler.dim();
        check_dim(d, model.n_features())?;
        check_dim(d, surrogate.dim())?;
        if cfg.mode != sampler.mode() {
            return Err(ShapError::Configuration(format!(
                "value config mode {:?} does not match sampler mode {:?}",
                cfg.mode,
                sampler.mode()
            )));
        }
        if cfg.samples_per_coalition == 0 {
            return Err(ShapError::Configuration(
                "samples_per_coalition must be at least 1".into(),
            ));
        }
        let x = surrogate.center().as_slice().to_vec();
        let f_x = model.predict_one(&x);
        Ok(Self {
            model,
            surrogate,
            sampler,
            x,
            f_x,
            samples: cfg.samples_per_coalition,
            seed: cfg.seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn f_x(&self) -> f64 {
        self.f_x
    }

    pub fn samples_per_coalition(&self) -> usize {
        self.samples
    }

    pub fn sampler(&self) -> &CompletionSampler {
        self.sampler
    }

    pub fn surrogate(&self) -> &TaylorSurrogate {
        self.surrogate
    }

    pub fn model(&self) -> &dyn Predictor {
        self.model
    }

    /// Evaluates coalition `s` with an RNG derived from `(seed, index)`.
    pub fn evaluate(&self, s: &Coalition, index: u64) -> Result<PairedValue> {
        let mut rng = child_rng(self.seed, &[index]);
        self.evaluate_with(s, &mut rng)
    }

    pub fn evaluate_with<R: Rng + ?Sized>(&self, s: &Coalition, rng: &mut R) -> Result<PairedValue> {
        check_dim(self.dim(), s.dim())?;
        if s.is_full() {
            return Ok(PairedValue {
                v_model: self.f_x,
                v_approx: self.surrogate.evaluate(&self.x),
                per_sample_model: Vec::new(),
                per_sample_approx: Vec::new(),
            });
        }
        let d = self.dim();
        let mut buf = Vec::new();
        self.sampler.complete(s, &self.x, self.samples, rng, &mut buf)?;
        let mut model_vals = Vec::with_capacity(self.samples);
        let mut approx_vals = Vec::with_capacity(self.samples);
        for point in buf.chunks_exact(d) {
            model_vals.push(self.model.predict_one(point));
            approx_vals.push(self.surrogate.evaluate(point));
        }
        let n = self.samples as f64;
        Ok(PairedValue {
            v_model: model_vals.iter().sum::<f64>() / n,
            v_approx: approx_vals.iter().sum::<f64>() / n,
            per_sample_model: model_vals,
            per_sample_approx: approx_vals,
        })
    }
}

/// One-off paired evaluation of coalition `s` at the surrogate's center.
pub fn evaluate_value(
    model: &dyn Predictor,
    surrogate: &TaylorSurrogate,
    s: &Coalition,
    cfg: &ValueFunctionConfig,
    moments: &FeatureMoments,
    background: Option<&Dataset>,
) -> Result<PairedValue> {
    let sampler = CompletionSampler::new(cfg.mode, moments.clone(), background)?;
    ValueFunction::new(model, surrogate, &sampler, cfg)?.evaluate(s, 0)
}
