//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Smallest admissible Cholesky pivot (squared diagonal of L).
pub const PIVOT_THRESHOLD: f64 = 1e-10;

/// Solves `a x = b` for symmetric positive definite `a`.
///
/// Fails with [`Error::Singular`] when the factorization breaks down or its
/// smallest pivot falls below [`PIVOT_THRESHOLD`].
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or(Error::Singular { what, pivot: f64::NAN })?;
    let pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|v| v * v)
        .fold(f64::INFINITY, f64::min);
    if !(pivot >= PIVOT_THRESHOLD) {
        return Err(Error::Singular { what, pivot });
    }
    Ok(chol.solve(b))
}

/// Symmetric PSD square root; eigenvalues below 1e-12 are clamped to zero.
pub fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let vals = eig
        .eigenvalues
        .map(|l| if l < 1e-12 { 0.0 } else { l.sqrt() });
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Spectral norm (largest singular value).
pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// `m^p` for a square matrix and small integer `p`.
pub fn mat_pow(m: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(m.nrows(), m.ncols());
    for _ in 0..p {
        out = &out * m;
    }
    out
}

/// Numerically stable log(Σ exp(v)).
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Extreme eigenvalues (min, max) of a symmetric matrix.
pub fn sym_eig_range(a: &DMatrix<f64>) -> (f64, f64) {
    let vals = SymmetricEigen::new(a.clone()).eigenvalues;
    (vals.min(), vals.max())
}
