//! Small dense-matrix helpers shared across the crate.
//!
//! Everything here operates on `nalgebra` dynamic matrices; dimensions in
//! this crate are tiny (at most a few dozen), so no attention is paid to
//! blocking or allocation reuse.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest absolute entry of a matrix, 0 for an empty one.
pub fn max_abs_entry(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Maximum absolute deviation from the identity matrix.
pub fn identity_residual(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..m.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((m[(i, j)] - target).abs());
        }
    }
    worst
}

/// Checks symmetry within an absolute tolerance.
pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// Eigenvalues of a symmetric matrix, sorted ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Eigen-decomposition of a symmetric matrix with pairs sorted ascending
/// by eigenvalue and each eigenvector's sign fixed so that its first
/// non-negligible component is positive. The sign and order conventions
/// make the factorization a pure function of the input.
pub fn sym_eigen_sorted(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let decomp = m.clone().symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| decomp.eigenvalues[a].total_cmp(&decomp.eigenvalues[b]));

    let mut values = Vec::with_capacity(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(decomp.eigenvalues[src]);
        let col = decomp.eigenvectors.column(src);
        let sign = col
            .iter()
            .find(|x| x.abs() > 1e-12)
            .map_or(1.0, |x| x.signum());
        for i in 0..n {
            vectors[(i, dst)] = sign * col[i];
        }
    }
    (values, vectors)
}

/// Symmetric positive semi-definite square root. Small negative
/// eigenvalues (rounding noise) are clamped to zero.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, q) = sym_eigen_sorted(m);
    let n = m.nrows();
    let mut scaled = q.clone();
    for (j, lam) in values.iter().enumerate() {
        let root = lam.max(0.0).sqrt();
        for i in 0..n {
            scaled[(i, j)] *= root;
        }
    }
    scaled * q.transpose()
}

/// Symmetric inverse square root of a positive definite matrix.
pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, q) = sym_eigen_sorted(m);
    if values.iter().any(|&l| l <= 1e-14) {
        return Err(Error::InvalidParameter(
            "matrix not positive definite".into(),
        ));
    }
    let n = m.nrows();
    let mut scaled = q.clone();
    for (j, lam) in values.iter().enumerate() {
        let root = 1.0 / lam.sqrt();
        for i in 0..n {
            scaled[(i, j)] *= root;
        }
    }
    Ok(scaled * q.transpose())
}

/// `log det` of a symmetric positive definite matrix via eigenvalues.
/// Fails when any eigenvalue falls below `floor`.
pub fn sym_log_det(m: &DMatrix<f64>, floor: f64) -> Result<f64> {
    let mut acc = 0.0;
    for lam in sym_eigenvalues(m) {
        if lam <= floor {
            return Err(Error::NotIntegrable(format!(
                "eigenvalue {lam:.3e} at or below floor {floor:.1e}"
            )));
        }
        acc += lam.ln();
    }
    Ok(acc)
}

/// Solves `m x = b` for symmetric positive definite `m` by Cholesky.
pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotIntegrable("matrix not positive definite".into()))?;
    Ok(chol.solve(b))
}
