//! Small dense linear-algebra helpers shared by the sampling and closed-form code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, ShapError};

/// Condition number above which a conditioning block is ridge-regularized.
pub const MAX_CONDITION: f64 = 1e10;

/// Relative ridge added to an ill-conditioned block, scaled by its mean diagonal.
pub const RIDGE_SCALE: f64 = 1e-6;

pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn subvector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Inverse of a symmetric positive (semi)definite block.
///
/// A ridge of `RIDGE_SCALE * trace / n` is added only when the condition
/// number exceeds [`MAX_CONDITION`].
pub fn spd_inverse(block: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = block.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let sym = symmetrize(block);
    let eig = SymmetricEigen::new(sym.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let ill = min <= 0.0 || max / min > MAX_CONDITION;
    let work = if ill {
        let lambda = RIDGE_SCALE * sym.trace() / n as f64;
        if lambda <= 0.0 || !lambda.is_finite() {
            return Err(ShapError::Linalg(
                "conditioning block has zero trace and cannot be regularized".into(),
            ));
        }
        sym + DMatrix::identity(n, n) * lambda
    } else {
        sym
    };
    work.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| ShapError::Linalg("conditioning block is singular after ridge".into()))
}

/// Factor `L` with `L Lᵀ = m` for a symmetric matrix whose negative
/// eigenvalues are clipped to zero first.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut factor = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    factor
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Maximum absolute asymmetry `|m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Inverse of a general square matrix, Cholesky first and LU as fallback.
pub fn inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(c) = m.clone().cholesky() {
        return Some(c.inverse());
    }
    m.clone().try_inverse()
}
