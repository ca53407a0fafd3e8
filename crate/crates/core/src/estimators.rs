//! Monte Carlo Shapley estimators run on paired model/surrogate values.

use nalgebra::{DMatrix, DVector};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::{index::sample, SliceRandom};

use crate::error::{Result, ShapError};
use crate::linalg::{inverse, min_eigenvalue};
use crate::rng::child_rng;
use crate::types::{Coalition, ShapleyEstimate};
use crate::value::ValueFunction;

/// Attempts at drawing a full-rank KernelSHAP design before giving up.
pub const MAX_DESIGN_RETRIES: usize = 10;

/// Smallest eigenvalue of `ZᵀZ`, relative to the largest, for a usable design.
const DESIGN_RCOND: f64 = 1e-12;

/// Per-draw increments `G_S = v(S ∪ j) − v(S)` for one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementRecord {
    pub model: Vec<f64>,
    pub approx: Vec<f64>,
}

impl IncrementRecord {
    pub fn len(&self) -> usize {
        self.model.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model.is_empty()
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct ShapleySamplingOutput {
    pub model: ShapleyEstimate,
    pub approx: ShapleyEstimate,
    /// One record per feature.
    pub increments: Vec<IncrementRecord>,
}

/// Permutation sampling for a single feature: each draw takes the features
/// preceding `j` in a uniform permutation as `S` and evaluates `S` and `S ∪ j`.
pub fn shapley_sampling(vf: &ValueFunction<'_>, j: usize, m: usize, seed: u64) -> Result<(f64, f64, IncrementRecord)> {
    let d = vf.dim();
    if j >= d {
        return Err(ShapError::InvalidInput(format!("feature {j} out of range for d = {d}")));
    }
    if m < 2 {
        return Err(ShapError::InsufficientData("Shapley sampling needs M >= 2".into()));
    }
    let mut rng = child_rng(seed, &[j as u64]);
    let mut perm: Vec<usize> = (0..d).collect();
    let mut rec = IncrementRecord {
        model: Vec::with_capacity(m),
        approx: Vec::with_capacity(m),
    };
    for draw in 0..m {
        perm.shuffle(&mut rng);
        let pos = perm.iter().position(|&k| k == j).expect("j in permutation");
        let s = Coalition::from_indices(d, &perm[..pos])?;
        let base = (j * m + draw) as u64 * 2;
        let without = vf.evaluate(&s, base)?;
        let with = vf.evaluate(&s.with(j), base + 1)?;
        rec.model.push(with.v_model - without.v_model);
        rec.approx.push(with.v_approx - without.v_approx);
    }
    Ok((IncrementRecord::mean(&rec.model), IncrementRecord::mean(&rec.approx), rec))
}

/// Permutation sampling for all features at once. Each of the `m` permutations
/// is walked from `∅` to `[d]`, so every feature gets one increment per
/// permutation and consecutive coalitions share their value evaluations.
pub fn shapley_sampling_all(vf: &ValueFunction<'_>, m: usize, seed: u64) -> Result<ShapleySamplingOutput> {
    let d = vf.dim();
    if m < 2 {
        return Err(ShapError::InsufficientData("Shapley sampling needs M >= 2".into()));
    }
    let mut rng = child_rng(seed, &[u64::MAX]);
    let mut perm: Vec<usize> = (0..d).collect();
    let mut increments = vec![
        IncrementRecord {
            model: Vec::with_capacity(m),
            approx: Vec::with_capacity(m),
        };
        d
    ];
    let mut model_inc = vec![0.0; d];
    let mut approx_inc = vec![0.0; d];
    for draw in 0..m {
        perm.shuffle(&mut rng);
        let base = (draw * (d + 1)) as u64;
        let mut s = Coalition::empty(d);
        let mut prev = vf.evaluate(&s, base)?;
        for (k, &j) in perm.iter().enumerate() {
            s = s.with(j);
            let next = vf.evaluate(&s, base + k as u64 + 1)?;
            model_inc[j] = next.v_model - prev.v_model;
            approx_inc[j] = next.v_approx - prev.v_approx;
            prev = next;
        }
        for j in 0..d {
            increments[j].model.push(model_inc[j]);
            increments[j].approx.push(approx_inc[j]);
        }
    }
    let model = DVector::from_iterator(d, increments.iter().map(|r| IncrementRecord::mean(&r.model)));
    let approx = DVector::from_iterator(d, increments.iter().map(|r| IncrementRecord::mean(&r.approx)));
    Ok(ShapleySamplingOutput {
        model: ShapleyEstimate::new(model, m),
        approx: ShapleyEstimate::new(approx, m),
        increments,
    })
}

/// Probabilities of coalition sizes `1..d-1` under the Shapley kernel,
/// proportional to `(d-1) / (k (d-k))`.
pub fn kernel_size_distribution(d: usize) -> Result<Vec<f64>> {
    if d < 2 {
        return Err(ShapError::InvalidInput("KernelSHAP needs d >= 2".into()));
    }
    let raw: Vec<f64> = (1..d)
        .map(|k| (d - 1) as f64 / (k * (d - k)) as f64)
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// `m` i.i.d. coalitions from the Shapley kernel: a size `k` from
/// [`kernel_size_distribution`], then a uniform `k`-subset.
pub fn kernel_sample_coalitions(d: usize, m: usize, seed: u64) -> Result<Vec<Coalition>> {
    let probs = kernel_size_distribution(d)?;
    let sizes = WeightedIndex::new(&probs).map_err(|e| ShapError::InvalidInput(e.to_string()))?;
    let mut rng = child_rng(seed, &[0]);
    (0..m)
        .map(|_| {
            let k = sizes.sample(&mut rng) + 1;
            let mut idx = sample(&mut rng, d, k).into_vec();
            idx.sort_unstable();
            Coalition::from_indices(d, &idx)
        })
        .collect()
}

/// Quantities of the constrained least-squares solve that depend only on the
/// design `Z`, shared by both value streams and by variance estimation.
#[derive(Debug, Clone)]
pub struct KernelDesign {
    z: DMatrix<f64>,
    /// `(ZᵀZ)⁻¹ 1`.
    ztz_inv_one: DVector<f64>,
    /// `1ᵀ (ZᵀZ)⁻¹ 1`.
    denom: f64,
    /// `A(Z) = (ZᵀZ)⁻¹ [I − 1 1ᵀ (ZᵀZ)⁻¹ / denom] Zᵀ`, `d × M`.
    a: DMatrix<f64>,
}

impl KernelDesign {
    pub fn new(coalitions: &[Coalition]) -> Result<Self> {
        let m = coalitions.len();
        let d = coalitions
            .first()
            .map(|c| c.dim())
            .ok_or_else(|| ShapError::DegenerateDesign("no coalitions".into()))?;
        let z = DMatrix::from_fn(m, d, |r, c| if coalitions[r].contains(c) { 1.0 } else { 0.0 });
        Self::from_matrix(z)
    }

    pub fn from_matrix(z: DMatrix<f64>) -> Result<Self> {
        let (m, d) = z.shape();
        for j in 0..d {
            let ones = z.column(j).iter().filter(|&&v| v == 1.0).count();
            if ones == 0 || ones == m {
                return Err(ShapError::DegenerateDesign(format!(
                    "feature {j} is never varied across the {m} sampled coalitions"
                )));
            }
        }
        let ztz = z.transpose() * &z;
        let top = ztz.amax();
        if min_eigenvalue(&ztz) <= DESIGN_RCOND * top {
            return Err(ShapError::DegenerateDesign("ZᵀZ is singular".into()));
        }
        let inv = inverse(&ztz).ok_or_else(|| ShapError::DegenerateDesign("ZᵀZ is singular".into()))?;
        let ones = DVector::from_element(d, 1.0);
        let ztz_inv_one = &inv * &ones;
        let denom = ones.dot(&ztz_inv_one);
        let proj = DMatrix::identity(d, d) - &ones * ztz_inv_one.transpose() / denom;
        let a = &inv * proj * z.transpose();
        Ok(Self {
            z,
            ztz_inv_one,
            denom,
            a,
        })
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn n_coalitions(&self) -> usize {
        self.z.nrows()
    }

    /// `φ̂ = A(Z)(V − v_∅) + [(v_full − v_∅) / denom] (ZᵀZ)⁻¹ 1`.
    pub fn solve(&self, values: &[f64], v_empty: f64, v_full: f64) -> Result<DVector<f64>> {
        crate::error::check_dim(self.n_coalitions(), values.len())?;
        let centered = DVector::from_iterator(values.len(), values.iter().map(|v| v - v_empty));
        Ok(&self.a * centered + &self.ztz_inv_one * ((v_full - v_empty) / self.denom))
    }
}

/// Constrained least squares `min ‖Zφ − (V − v_∅)‖²` s.t. `1ᵀφ = v_full − v_∅`.
pub fn kernelshap_solve(z: &DMatrix<f64>, values: &DVector<f64>, v_empty: f64, v_full: f64) -> Result<DVector<f64>> {
    KernelDesign::from_matrix(z.clone())?.solve(values.as_slice(), v_empty, v_full)
}

/// One sampled coalition with its paired values.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDraw {
    pub coalition: Coalition,
    pub v_model: f64,
    pub v_approx: f64,
    pub per_sample_model: Vec<f64>,
    pub per_sample_approx: Vec<f64>,
}

/// `v(∅)` and `v([d])` for both streams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Endpoints {
    pub empty_model: f64,
    pub empty_approx: f64,
    pub full_model: f64,
    pub full_approx: f64,
}

#[derive(Debug, Clone)]
pub struct KernelShapOutput {
    pub model: ShapleyEstimate,
    pub approx: ShapleyEstimate,
    pub draws: Vec<KernelDraw>,
    pub design: KernelDesign,
    pub endpoints: Endpoints,
}

/// Samples `m` coalitions (redrawing if the design is singular), evaluates both
/// streams on them and solves the constrained regression for each.
/// `empty_model` and `empty_approx` supply `v(∅)`; `v([d])` is `f(x)` and `g(x)`.
pub fn kernelshap(
    vf: &ValueFunction<'_>,
    m: usize,
    seed: u64,
    empty_model: f64,
    empty_approx: f64,
) -> Result<KernelShapOutput> {
    let d = vf.dim();
    if d < 2 {
        return Err(ShapError::InvalidInput("KernelSHAP needs d >= 2".into()));
    }
    if m < d + 2 {
        return Err(ShapError::Configuration(format!(
            "KernelSHAP needs M >= d + 2 = {}, got {m}",
            d + 2
        )));
    }
    let mut last = None;
    let mut found = None;
    for attempt in 0..MAX_DESIGN_RETRIES {
        let coalitions = kernel_sample_coalitions(d, m, crate::rng::child_seed(seed, &[attempt as u64]))?;
        match KernelDesign::new(&coalitions) {
            Ok(design) => {
                found = Some((coalitions, design));
                break;
            }
            Err(e) => last = Some(e),
        }
    }
    let Some((coalitions, design)) = found else {
        return Err(last.expect("at least one attempt"));
    };
    let mut draws = Vec::with_capacity(m);
    for (i, s) in coalitions.into_iter().enumerate() {
        let v = vf.evaluate(&s, i as u64)?;
        draws.push(KernelDraw {
            coalition: s,
            v_model: v.v_model,
            v_approx: v.v_approx,
            per_sample_model: v.per_sample_model,
            per_sample_approx: v.per_sample_approx,
        });
    }
    let full = vf.evaluate(&Coalition::full(d), u64::MAX)?;
    let endpoints = Endpoints {
        empty_model,
        empty_approx,
        full_model: full.v_model,
        full_approx: full.v_approx,
    };
    let vm: Vec<f64> = draws.iter().map(|r| r.v_model).collect();
    let va: Vec<f64> = draws.iter().map(|r| r.v_approx).collect();
    let model = design.solve(&vm, empty_model, endpoints.full_model)?;
    let approx = design.solve(&va, empty_approx, endpoints.full_approx)?;
    Ok(KernelShapOutput {
        model: ShapleyEstimate::new(model, m),
        approx: ShapleyEstimate::new(approx, m),
        draws,
        design,
        endpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_distribution_d4() {
        let p = kernel_size_distribution(4).unwrap();
        assert!((p[0] - 4.0 / 11.0).abs() < 1e-15);
        assert!((p[1] - 3.0 / 11.0).abs() < 1e-15);
        assert!((p[2] - 4.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn d2_draws_are_singletons() {
        let c = kernel_sample_coalitions(2, 200, 1).unwrap();
        assert!(c.iter().all(|s| s.len() == 1));
        let first = c.iter().filter(|s| s.contains(0)).count();
        assert!(first > 60 && first < 140);
    }

    #[test]
    fn two_by_two_solve() {
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let (a, b, e, f) = (0.7, 0.2, 0.1, 1.5);
        let phi = kernelshap_solve(&z, &DVector::from_vec(vec![a, b]), e, f).unwrap();
        let delta = f - e;
        assert!((phi[0] - (a - b + delta) / 2.0).abs() < 1e-14);
        assert!((phi[1] - (b - a + delta) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
        assert!(matches!(
            kernelshap_solve(&z, &DVector::zeros(3), 0.0, 1.0),
            Err(ShapError::DegenerateDesign(_))
        ));
    }

    #[test]
    fn repeated_coalition_is_degenerate() {
        let c = Coalition::from_indices(3, &[0]).unwrap();
        assert!(KernelDesign::new(&vec![c; 10]).is_err());
    }
}
