//! Small dense helpers for stacked agent vectors.
//!
//! A stacked vector holds one `d`-dimensional block per agent; agent `i`
//! occupies entries `i*d .. (i+1)*d`.

use nalgebra::{DMatrix, DVector, DVectorView, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Block `i` of a stacked vector.
pub fn block(v: &DVector<f64>, i: usize, d: usize) -> DVectorView<'_, f64> {
    v.rows(i * d, d)
}

pub fn set_block(v: &mut DVector<f64>, i: usize, d: usize, value: &DVector<f64>) {
    v.rows_mut(i * d, d).copy_from(value);
}

/// `1_n ⊗ x`.
pub fn repeat(x: &DVector<f64>, n: usize) -> DVector<f64> {
    let d = x.len();
    DVector::from_fn(n * d, |r, _| x[r % d])
}

/// Induced infinity norm (max absolute row sum).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn vec_inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Singular values sorted descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = match to_faer(m).singular_values() {
        Ok(s) => s,
        Err(_) => m.clone().svd(false, false).singular_values.iter().copied().collect(),
    };
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank with threshold `rel_tol * sigma_max`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&max) if max > 0.0 => s.iter().filter(|&&x| x > rel_tol * max).count(),
        _ => 0,
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = match to_faer(m).self_adjoint_eigenvalues(faer::Side::Lower) {
        Ok(ev) => ev,
        Err(_) => SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect(),
    };
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Eigenvalues of a general square matrix, in no particular order.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let ev = to_faer(m).eigenvalues().map_err(|_| Error::NoConvergence)?;
    Ok(ev.into_iter().map(|z| Complex64::new(z.re, z.im)).collect())
}

/// Solve `a x = b` for symmetric positive definite `a`, falling back to LU.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    a.clone().lu().solve(b)
}

/// Solve `a X = B` column-wise, same strategy as [`solve_spd`].
pub fn solve_spd_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    a.clone().lu().solve(b)
}
