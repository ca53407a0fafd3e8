//! Stability metrics computed across repeated estimates.

use crate::error::{Result, ShapError};

/// Sample variance, denominator `n - 1`.
pub fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn column(estimates: &[Vec<f64>], j: usize) -> Vec<f64> {
    estimates.iter().map(|r| r[j]).collect()
}

fn check_shape(estimates: &[Vec<f64>]) -> Result<usize> {
    if estimates.len() < 2 {
        return Err(ShapError::InsufficientData(format!(
            "need at least 2 repetitions, got {}",
            estimates.len()
        )));
    }
    let d = estimates[0].len();
    if estimates.iter().any(|r| r.len() != d) {
        return Err(ShapError::InvalidInput("repetitions differ in length".into()));
    }
    Ok(d)
}

/// Per feature `(Var(raw) − Var(cv)) / Var(raw)` across repetitions
/// (`repetition × feature` inputs). `None` where `Var(raw)` is 0.
pub fn var_reduc(raw: &[Vec<f64>], cv: &[Vec<f64>]) -> Result<Vec<Option<f64>>> {
    let d = check_shape(raw)?;
    if check_shape(cv)? != d || cv.len() != raw.len() {
        return Err(ShapError::InvalidInput("raw and cv shapes differ".into()));
    }
    Ok((0..d)
        .map(|j| {
            let base = sample_variance(&column(raw, j));
            (base > 0.0).then(|| (base - sample_variance(&column(cv, j))) / base)
        })
        .collect())
}

/// Rank of each feature (0 = largest `|φ|`), ties broken by lower index.
pub fn ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    let mut r = vec![0; values.len()];
    for (pos, &j) in order.iter().enumerate() {
        r[j] = pos;
    }
    r
}

/// Mean over unordered repetition pairs of `Σ_j |r_j^a − r_j^b|`.
pub fn rank_changes(estimates: &[Vec<f64>]) -> Result<f64> {
    check_shape(estimates)?;
    let rk: Vec<Vec<usize>> = estimates.iter().map(|e| ranks(e)).collect();
    let n = rk.len();
    let mut total = 0usize;
    for a in 0..n {
        for b in a + 1..n {
            total += rk[a].iter().zip(&rk[b]).map(|(x, y)| x.abs_diff(*y)).sum::<usize>();
        }
    }
    Ok(total as f64 / (n * (n - 1) / 2) as f64)
}

/// `|Σφ − (f(x) − v(∅))| / max(|f(x) − v(∅)|, 1e-8)`.
pub fn efficiency_gap(phi: &[f64], f_x: f64, v_empty: f64) -> f64 {
    let target = f_x - v_empty;
    (phi.iter().sum::<f64>() - target).abs() / target.abs().max(1e-8)
}

/// Indices of the `k` largest `|values|`, ties broken by lower index.
pub fn top_k_features(values: &[f64], k: usize) -> Vec<usize> {
    let r = ranks(values);
    let mut idx: Vec<usize> = (0..values.len()).filter(|&j| r[j] < k).collect();
    idx.sort_by_key(|&j| r[j]);
    idx
}

/// `(before − after) / before`, `None` when `before` is 0.
pub fn relative_reduction(before: f64, after: f64) -> Option<f64> {
    (before > 0.0).then(|| (before - after) / before)
}
