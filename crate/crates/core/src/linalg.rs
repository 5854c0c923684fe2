//! Dense linear-algebra helpers shared by the modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::{Error, Result};

/// Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if !m.is_square() {
        return Err(Error::Dimension {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite(what))
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let vals = eig.eigenvalues.map(f);
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= vals[j];
    }
    symmetrize(&(scaled * v.transpose()))
}

/// Symmetric square root of a positive semidefinite matrix. Slightly
/// negative eigenvalues from rounding are clamped to zero.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_apply(m, |l| l.max(0.0).sqrt())
}

/// Pseudo inverse square root: eigenvalues below `rel_floor · λ_max` are
/// treated as zero.
pub fn sym_inv_sqrt(m: &DMatrix<f64>, rel_floor: f64) -> DMatrix<f64> {
    let lmax = SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .fold(0.0_f64, |a, &b| a.max(b));
    let cut = rel_floor * lmax;
    sym_apply(m, |l| if l > cut && l > 0.0 { 1.0 / l.sqrt() } else { 0.0 })
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn sym_extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let vals = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    vals.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Spectral norm. Uses the singular values, adequate at desk scale.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().fold(0.0_f64, |a, &b| a.max(b))
}

/// `tr(a·b)` without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.ncols(), b.nrows());
    assert_eq!(a.nrows(), b.ncols());
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

/// Orthonormal basis of the span of `vectors` (modified Gram-Schmidt with
/// one reorthogonalisation pass). Vectors whose remaining norm falls below
/// `tol` times their original norm are dropped as dependent.
pub fn orthonormal_basis(vectors: &[DVector<f64>], tol: f64) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for v in vectors {
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        let n = w.norm();
        if n > tol * norm0 {
            basis.push(w / n);
        }
    }
    basis
}
