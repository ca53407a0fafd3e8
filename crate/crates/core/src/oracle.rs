//! Exact Shapley values by enumeration, for small `d`.

use nalgebra::DVector;

use crate::error::{Result, ShapError};
use crate::types::Coalition;

/// Largest `d` accepted by [`exact_shapley`].
pub const MAX_ORACLE_DIM: usize = 12;

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `w = 1 / (d · C(d-1, s))`, the weight of one coalition of size `s` not
/// containing the target feature.
pub fn shapley_weight(d: usize, s: usize) -> Result<f64> {
    if d == 0 || s >= d {
        return Err(ShapError::InvalidInput(format!(
            "coalition size {s} out of range for d = {d}"
        )));
    }
    Ok(1.0 / (d as f64 * binomial(d - 1, s).round()))
}

/// `φ_j = Σ_{S ⊆ [d]∖{j}} w_S (v(S ∪ j) − v(S))`, evaluating `value_fn` once
/// per subset.
pub fn exact_shapley<F>(d: usize, mut value_fn: F) -> Result<DVector<f64>>
where
    F: FnMut(&Coalition) -> Result<f64>,
{
    if d == 0 {
        return Err(ShapError::InvalidInput("d must be positive".into()));
    }
    if d > MAX_ORACLE_DIM {
        return Err(ShapError::Capability(format!(
            "exact enumeration supports d <= {MAX_ORACLE_DIM}, got {d}"
        )));
    }
    let n = 1usize << d;
    let values: Vec<f64> = (0..n)
        .map(|bits| value_fn(&Coalition::from_bits(d, bits as u64)))
        .collect::<Result<_>>()?;
    let weights: Vec<f64> = (0..d).map(|s| shapley_weight(d, s)).collect::<Result<_>>()?;
    let mut phi = DVector::zeros(d);
    for (bits, v) in values.iter().enumerate() {
        let size = bits.count_ones() as usize;
        for j in 0..d {
            if bits & (1 << j) == 0 {
                phi[j] += weights[size] * (values[bits | (1 << j)] - v);
            }
        }
    }
    Ok(phi)
}

/// The permutation form: `φ_j` is the average over all `d!` orderings of the
/// increment from adding `j` to its predecessors. Limited to `d <= 8`.
pub fn exact_shapley_permutations<F>(d: usize, mut value_fn: F) -> Result<DVector<f64>>
where
    F: FnMut(&Coalition) -> Result<f64>,
{
    if d == 0 || d > 8 {
        return Err(ShapError::Capability(format!(
            "permutation enumeration supports 1 <= d <= 8, got {d}"
        )));
    }
    let values: Vec<f64> = (0..1usize << d)
        .map(|bits| value_fn(&Coalition::from_bits(d, bits as u64)))
        .collect::<Result<_>>()?;
    let mut phi = DVector::zeros(d);
    let mut count = 0usize;
    let mut perm: Vec<usize> = (0..d).collect();
    loop {
        let mut bits = 0usize;
        for &j in &perm {
            phi[j] += values[bits | (1 << j)] - values[bits];
            bits |= 1 << j;
        }
        count += 1;
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(phi / count as f64)
}

fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = p.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let k = p.iter().rposition(|&v| v > p[i]).expect("successor exists");
    p.swap(i, k);
    p[i + 1..].reverse();
    true
}

/// `Σ_{S ⊆ [d]∖{j}} w_S` by enumeration; equals 1.
pub fn weight_sum(d: usize) -> Result<f64> {
    if d == 0 || d > 30 {
        return Err(ShapError::InvalidInput(format!("weight_sum needs 1 <= d <= 30, got {d}")));
    }
    let weights: Vec<f64> = (0..d).map(|s| shapley_weight(d, s)).collect::<Result<_>>()?;
    Ok((0..1u64 << (d - 1)).map(|bits| weights[bits.count_ones() as usize]).sum())
}

/// `Σ_{S ⊆ [d]∖{j,k}} w_S` by enumeration; equals 1/2.
pub fn weight_identity_half(d: usize) -> Result<f64> {
    if !(2..=30).contains(&d) {
        return Err(ShapError::InvalidInput(format!(
            "weight_identity_half needs 2 <= d <= 30, got {d}"
        )));
    }
    let weights: Vec<f64> = (0..d).map(|s| shapley_weight(d, s)).collect::<Result<_>>()?;
    Ok((0..1u64 << (d - 2)).map(|bits| weights[bits.count_ones() as usize]).sum())
}
