//! Taylor surrogates of a model at the query point and their exact Shapley
//! values: the quadratic surrogate under marginal sampling, and the linear
//! surrogate under Gaussian conditioning via the `D_j` matrices.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Result, ShapError};
use crate::linalg::{self, spd_inverse, submatrix};
use crate::oracle::shapley_weight;
use crate::predictors::{
    analytic_gradient, analytic_hessian, fd_gradient, fd_hessian, FiniteDifferenceConfig,
};
use crate::rng::rng_from;
use crate::types::{Coalition, FeatureMoments, Predictor};
use crate::value::exact_value_quadratic;

/// Largest dimension accepted by [`compute_dj_exact`]; the subset
/// enumeration costs `O(2^d d^3)`.
pub const MAX_EXACT_DJ_DIM: usize = 16;

/// First- or second-order expansion of a model around `center`:
/// `g(x') = f(x) + (x'-x)ᵀJ + ½ (x'-x)ᵀH(x'-x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorSurrogate {
    center: DVector<f64>,
    f_center: f64,
    gradient: DVector<f64>,
    hessian: Option<DMatrix<f64>>,
}

impl TaylorSurrogate {
    pub fn linear(center: DVector<f64>, f_center: f64, gradient: DVector<f64>) -> Result<Self> {
        check_dim(center.len(), gradient.len())?;
        Ok(Self {
            center,
            f_center,
            gradient,
            hessian: None,
        })
    }

    pub fn quadratic(
        center: DVector<f64>,
        f_center: f64,
        gradient: DVector<f64>,
        hessian: DMatrix<f64>,
    ) -> Result<Self> {
        let d = center.len();
        check_dim(d, gradient.len())?;
        check_dim(d, hessian.nrows())?;
        check_dim(d, hessian.ncols())?;
        let tol = 1e-9 * hessian.amax().max(1.0);
        if linalg::asymmetry(&hessian) > tol {
            return Err(ShapError::InvalidInput("Hessian is not symmetric".into()));
        }
        Ok(Self {
            center,
            f_center,
            gradient,
            hessian: Some(linalg::symmetrize(&hessian)),
        })
    }

    pub fn order(&self) -> usize {
        if self.hessian.is_some() {
            2
        } else {
            1
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn f_center(&self) -> f64 {
        self.f_center
    }

    pub fn jacobian(&self) -> &DVector<f64> {
        &self.gradient
    }

    pub fn hessian_matrix(&self) -> Option<&DMatrix<f64>> {
        self.hessian.as_ref()
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let d = self.center.len();
        let mut lin = 0.0;
        let mut quad = 0.0;
        match &self.hessian {
            None => {
                for i in 0..d {
                    lin += (x[i] - self.center[i]) * self.gradient[i];
                }
            }
            Some(h) => {
                for i in 0..d {
                    let di = x[i] - self.center[i];
                    lin += di * self.gradient[i];
                    let mut row = 0.0;
                    for j in 0..d {
                        row += h[(i, j)] * (x[j] - self.center[j]);
                    }
                    quad += di * row;
                }
            }
        }
        self.f_center + lin + 0.5 * quad
    }
}

impl Predictor for TaylorSurrogate {
    fn n_features(&self) -> usize {
        self.dim()
    }

    fn predict_one(&self, x: &[f64]) -> f64 {
        self.evaluate(x)
    }

    fn gradient(&self, x: &[f64]) -> Option<DVector<f64>> {
        Some(match &self.hessian {
            None => self.gradient.clone(),
            Some(h) => &self.gradient + h * (DVector::from_column_slice(x) - &self.center),
        })
    }

    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        let d = self.dim();
        Some(self.hessian.clone().unwrap_or_else(|| DMatrix::zeros(d, d)))
    }
}

/// Where surrogate derivatives come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DerivativeSource {
    Analytic,
    FiniteDifference(FiniteDifferenceConfig),
}

/// A surrogate plus the one-hot columns dropped from its Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltSurrogate {
    pub surrogate: TaylorSurrogate,
    pub hessian_excluded: Vec<usize>,
}

/// Expands `model` around `x` to the requested order (1 or 2).
pub fn build_surrogate(
    model: &dyn Predictor,
    x: &[f64],
    order: usize,
    source: &DerivativeSource,
) -> Result<BuiltSurrogate> {
    check_dim(model.n_features(), x.len())?;
    let center = DVector::from_column_slice(x);
    let fx = model.predict_one(x);
    let gradient = match source {
        DerivativeSource::Analytic => analytic_gradient(model, x)?,
        DerivativeSource::FiniteDifference(cfg) => fd_gradient(model, x, cfg)?,
    };
    match order {
        1 => Ok(BuiltSurrogate {
            surrogate: TaylorSurrogate::linear(center, fx, gradient)?,
            hessian_excluded: Vec::new(),
        }),
        2 => {
            let (h, excluded) = match source {
                DerivativeSource::Analytic => (analytic_hessian(model, x)?, Vec::new()),
                DerivativeSource::FiniteDifference(cfg) => {
                    let est = fd_hessian(model, x, cfg)?;
                    (est.hessian, est.excluded_columns)
                }
            };
            Ok(BuiltSurrogate {
                surrogate: TaylorSurrogate::quadratic(center, fx, gradient, h)?,
                hessian_excluded: excluded,
            })
        }
        other => Err(ShapError::Configuration(format!(
            "surrogate order must be 1 or 2, got {other}"
        ))),
    }
}

/// Exact Shapley values of the quadratic surrogate when absent features are
/// drawn from their marginal distribution:
///
/// `φ_j = J_j(x_j-μ_j) - ½[Σ_k (x_k-μ_k)H_jk](x_j-μ_j) - ½ Σ_k Σ_jk H_jk`.
pub fn quadratic_shapley(surrogate: &TaylorSurrogate, moments: &FeatureMoments) -> Result<DVector<f64>> {
    let d = surrogate.dim();
    check_dim(d, moments.dim())?;
    let h = surrogate
        .hessian_matrix()
        .ok_or_else(|| ShapError::Capability("quadratic Shapley needs a Hessian".into()))?;
    let delta = surrogate.center() - moments.mu();
    let hd = h * &delta;
    let sigma = moments.sigma();
    Ok(DVector::from_fn(d, |j, _| {
        let cross: f64 = (0..d).map(|k| sigma[(j, k)] * h[(j, k)]).sum();
        surrogate.jacobian()[j] * delta[j] - 0.5 * hd[j] * delta[j] - 0.5 * cross
    }))
}

/// Selector and projection matrices for a coalition under the Gaussian model.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    /// `|S| × d` row selector `P_S`.
    pub selector: DMatrix<f64>,
    /// `Q_S = P_Sᵀ P_S`.
    pub q: DMatrix<f64>,
    /// `R_S = P_S̄ᵀ P_S̄ Σ P_Sᵀ (P_S Σ P_Sᵀ)⁻¹ P_S`.
    pub r: DMatrix<f64>,
}

fn selector(d: usize, idx: &[usize]) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(idx.len(), d);
    for (row, &i) in idx.iter().enumerate() {
        p[(row, i)] = 1.0;
    }
    p
}

/// Builds `P_S`, `Q_S` and `R_S` literally from their matrix definitions.
pub fn build_projection_set(s: &Coalition, moments: &FeatureMoments) -> Result<ProjectionSet> {
    let d = moments.dim();
    check_dim(d, s.dim())?;
    let p = selector(d, s.indices());
    let pc = selector(d, &s.complement());
    let q = p.transpose() * &p;
    let sigma = moments.sigma();
    let inner = spd_inverse(&(&p * sigma * p.transpose()))?;
    let r = pc.transpose() * &pc * sigma * p.transpose() * inner * &p;
    Ok(ProjectionSet { selector: p, q, r })
}

/// `Q_S + R_S`, filled directly: identity on the `S` diagonal and the
/// regression coefficients `Σ_S̄S Σ_SS⁻¹` in the `(S̄, S)` block.
pub(crate) fn conditional_projection(s: &Coalition, moments: &FeatureMoments) -> Result<DMatrix<f64>> {
    let d = moments.dim();
    let mut m = DMatrix::zeros(d, d);
    let inside = s.indices();
    if inside.is_empty() {
        return Ok(m);
    }
    for &i in inside {
        m[(i, i)] = 1.0;
    }
    let outside = s.complement();
    if outside.is_empty() {
        return Ok(m);
    }
    let sigma = moments.sigma();
    let coef = submatrix(sigma, &outside, inside) * spd_inverse(&submatrix(sigma, inside, inside))?;
    for (a, &r) in outside.iter().enumerate() {
        for (b, &c) in inside.iter().enumerate() {
            m[(r, c)] = coef[(a, b)];
        }
    }
    Ok(m)
}

/// The `x`-independent matrices `D_1..D_d` with `φ_j = Jᵀ D_j (x - μ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DjPrecompute {
    pub matrices: Vec<DMatrix<f64>>,
    /// Permutations averaged; `None` for the exact enumeration.
    pub n_permutations: Option<usize>,
    pub seed: Option<u64>,
    pub exact: bool,
}

impl DjPrecompute {
    pub fn dim(&self) -> usize {
        self.matrices.len()
    }

    /// `Σ_j D_j`, the identity when the enumeration is exact.
    pub fn sum(&self) -> DMatrix<f64> {
        let d = self.dim();
        self.matrices
            .iter()
            .fold(DMatrix::zeros(d, d), |acc, m| acc + m)
    }
}

/// Exact `D_j` by weighted enumeration of all `2^d` coalitions,
/// `D_j = Σ_{S ∌ j} w_S ([Q+R]_{S∪j} - [Q+R]_S)`.
pub fn compute_dj_exact(moments: &FeatureMoments) -> Result<DjPrecompute> {
    let d = moments.dim();
    if d > MAX_EXACT_DJ_DIM {
        return Err(ShapError::Capability(format!(
            "exact D_j enumeration supports d <= {MAX_EXACT_DJ_DIM} (got {d}); use the Monte Carlo variant"
        )));
    }
    let weights: Vec<f64> = (0..d).map(|s| shapley_weight(d, s)).collect::<Result<_>>()?;
    let mut dj = vec![DMatrix::zeros(d, d); d];
    for bits in 0..(1u64 << d) {
        let s = Coalition::from_bits(d, bits);
        let m = conditional_projection(&s, moments)?;
        let size = s.len();
        for (j, acc) in dj.iter_mut().enumerate() {
            if s.contains(j) {
                *acc += &m * weights[size - 1];
            } else if size < d {
                *acc -= &m * weights[size];
            }
        }
    }
    Ok(DjPrecompute {
        matrices: dj,
        n_permutations: None,
        seed: None,
        exact: true,
    })
}

/// Monte Carlo `D_j`: average of the permutation summand over `n_perms`
/// uniform permutations; each permutation updates every `D_j`.
pub fn compute_dj_mc(moments: &FeatureMoments, n_perms: usize, seed: u64) -> Result<DjPrecompute> {
    let d = moments.dim();
    if n_perms == 0 {
        return Err(ShapError::Configuration("n_perms must be at least 1".into()));
    }
    let mut rng = rng_from(seed);
    let mut cache: HashMap<Vec<bool>, DMatrix<f64>> = HashMap::new();
    let mut dj = vec![DMatrix::zeros(d, d); d];
    let mut order: Vec<usize> = (0..d).collect();
    for _ in 0..n_perms {
        order.shuffle(&mut rng);
        let mut mask = vec![false; d];
        let mut prev = DMatrix::zeros(d, d);
        for &j in &order {
            mask[j] = true;
            let next = match cache.get(&mask) {
                Some(m) => m.clone(),
                None => {
                    let m = conditional_projection(&Coalition::from_mask(&mask), moments)?;
                    if d <= 20 {
                        cache.insert(mask.clone(), m.clone());
                    }
                    m
                }
            };
            dj[j] += &next - &prev;
            prev = next;
        }
    }
    let scale = 1.0 / n_perms as f64;
    for m in &mut dj {
        *m *= scale;
    }
    Ok(DjPrecompute {
        matrices: dj,
        n_permutations: Some(n_perms),
        seed: Some(seed),
        exact: false,
    })
}

/// Exact Shapley values of the linear surrogate under Gaussian conditioning.
pub fn linear_shapley(
    surrogate: &TaylorSurrogate,
    dj: &DjPrecompute,
    moments: &FeatureMoments,
) -> Result<DVector<f64>> {
    let d = surrogate.dim();
    check_dim(d, moments.dim())?;
    check_dim(d, dj.dim())?;
    let delta = surrogate.center() - moments.mu();
    let j = surrogate.jacobian();
    Ok(DVector::from_fn(d, |k, _| j.dot(&(&dj.matrices[k] * &delta))))
}

/// Exact `v(∅)` of the quadratic surrogate under marginal sampling;
/// [`quadratic_shapley`] sums to `f(x)` minus this.
pub fn quadratic_empty_value(surrogate: &TaylorSurrogate, moments: &FeatureMoments) -> Result<f64> {
    let h = surrogate
        .hessian_matrix()
        .ok_or_else(|| ShapError::Capability("quadratic surrogate needs a Hessian".into()))?;
    exact_value_quadratic(
        surrogate.jacobian(),
        h,
        surrogate.f_center(),
        &Coalition::empty(surrogate.dim()),
        surrogate.center(),
        moments,
    )
}

/// Exact `v(∅) = f(x) + Jᵀ(μ - x)` of the linear surrogate.
pub fn linear_empty_value(surrogate: &TaylorSurrogate, moments: &FeatureMoments) -> Result<f64> {
    check_dim(surrogate.dim(), moments.dim())?;
    Ok(surrogate.f_center() + surrogate.jacobian().dot(&(moments.mu() - surrogate.center())))
}

/// How `D_j` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum DjStrategy {
    Exact,
    MonteCarlo { n_perms: usize, seed: u64 },
}

impl DjStrategy {
    /// Exact for `d <= 10`, otherwise `10 d²` sampled permutations.
    pub fn default_for(d: usize, seed: u64) -> Self {
        if d <= 10 {
            DjStrategy::Exact
        } else {
            DjStrategy::MonteCarlo {
                n_perms: 10 * d * d,
                seed,
            }
        }
    }

    pub fn compute(&self, moments: &FeatureMoments) -> Result<DjPrecompute> {
        match *self {
            DjStrategy::Exact => compute_dj_exact(moments),
            DjStrategy::MonteCarlo { n_perms, seed } => compute_dj_mc(moments, n_perms, seed),
        }
    }
}

/// Hex SHA-256 of `(d, Σ, μ, n_perms, seed)`.
pub fn dj_cache_key(moments: &FeatureMoments, strategy: &DjStrategy) -> String {
    let mut h = Sha256::new();
    h.update((moments.dim() as u64).to_le_bytes());
    for v in moments.sigma().iter() {
        h.update(v.to_le_bytes());
    }
    for v in moments.mu().iter() {
        h.update(v.to_le_bytes());
    }
    let (n, seed) = match *strategy {
        DjStrategy::Exact => (u64::MAX, u64::MAX),
        DjStrategy::MonteCarlo { n_perms, seed } => (n_perms as u64, seed),
    };
    h.update(n.to_le_bytes());
    h.update(seed.to_le_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Serialize, Deserialize)]
struct DjCacheFile {
    key: String,
    d: usize,
    exact: bool,
    n_permutations: Option<usize>,
    seed: Option<u64>,
    /// `matrices[j][row][col]`.
    matrices: Vec<Vec<Vec<f64>>>,
}

impl DjPrecompute {
    pub fn save_json(&self, path: impl AsRef<Path>, key: &str) -> Result<()> {
        let d = self.dim();
        let file = DjCacheFile {
            key: key.to_string(),
            d,
            exact: self.exact,
            n_permutations: self.n_permutations,
            seed: self.seed,
            matrices: self
                .matrices
                .iter()
                .map(|m| (0..d).map(|r| m.row(r).iter().copied().collect()).collect())
                .collect(),
        };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    /// Loads a cache file, returning it with its stored key.
    pub fn load_json(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let file: DjCacheFile = serde_json::from_reader(std::fs::File::open(path)?)?;
        let d = file.d;
        check_dim(d, file.matrices.len())?;
        let mut matrices = Vec::with_capacity(d);
        for m in &file.matrices {
            check_dim(d, m.len())?;
            for row in m {
                check_dim(d, row.len())?;
            }
            matrices.push(DMatrix::from_fn(d, d, |r, c| m[r][c]));
        }
        Ok((
            Self {
                matrices,
                n_permutations: file.n_permutations,
                seed: file.seed,
                exact: file.exact,
            },
            file.key,
        ))
    }
}

pub fn dj_cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("dj-{key}.json"))
}

/// Reads `D_j` from `cache_dir` when a file with a matching key exists,
/// otherwise computes it and writes the cache. Returns the cache key.
pub fn load_or_compute_dj(
    moments: &FeatureMoments,
    strategy: &DjStrategy,
    cache_dir: Option<&Path>,
) -> Result<(DjPrecompute, String)> {
    let key = dj_cache_key(moments, strategy);
    if let Some(dir) = cache_dir {
        let path = dj_cache_path(dir, &key);
        if path.exists() {
            let (dj, stored) = DjPrecompute::load_json(&path)?;
            if stored == key && dj.dim() == moments.dim() {
                log::info!("loaded D_j cache {}", path.display());
                return Ok((dj, key));
            }
        }
    }
    let dj = strategy.compute(moments)?;
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir)?;
        let path = dj_cache_path(dir, &key);
        dj.save_json(&path, &key)?;
        log::info!("wrote D_j cache {}", path.display());
    }
    Ok((dj, key))
}
