//! Gaussian building blocks shared by the designs.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::check_dim;
use crate::linalg;
use crate::{Error, Result};

/// A square-root factor `F` with `F Fᵀ = C`.
#[derive(Clone, Debug)]
pub(crate) enum Factor {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl Factor {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let p = cov.nrows();
        let off_diagonal = (0..p).any(|i| (0..p).any(|j| i != j && cov[(i, j)] != 0.0));
        if !off_diagonal {
            return Ok(Factor::Diagonal(cov.diagonal().map(|v| v.max(0.0).sqrt())));
        }
        match Cholesky::new(cov.clone()) {
            Some(ch) => Ok(Factor::Dense(ch.l())),
            // singular but PSD (validated by the caller)
            None => Ok(Factor::Dense(linalg::sym_sqrt(cov))),
        }
    }

    /// `F g`, column by column.
    pub fn apply(&self, g: DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Factor::Diagonal(d) => {
                let mut g = g;
                for mut col in g.column_iter_mut() {
                    col.component_mul_assign(d);
                }
                g
            }
            Factor::Dense(l) => l * g,
        }
    }
}

/// Checks a covariance is `p × p`, symmetric and positive semidefinite.
pub(crate) fn validate_cov(cov: &DMatrix<f64>, p: usize, what: &str) -> Result<()> {
    check_dim(p, cov.nrows())?;
    check_dim(p, cov.ncols())?;
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} has non-finite entries")));
    }
    let scale = cov.amax().max(1.0);
    if (cov - cov.transpose()).amax() > 1e-10 * scale {
        return Err(Error::InvalidArgument(format!("{what} is not symmetric")));
    }
    if p > 0 && linalg::sym_extreme_eigenvalues(cov).0 < -1e-10 * scale {
        return Err(Error::InvalidArgument(format!("{what} is not positive semidefinite")));
    }
    Ok(())
}

/// Copy of `c` whose tagged rows and columns are replaced by independent
/// coordinates of the given variances.
pub(crate) fn replace_coordinates(c: &DMatrix<f64>, tags: &[(usize, f64)]) -> DMatrix<f64> {
    let mut out = c.clone();
    for &(k, var) in tags {
        out.row_mut(k).fill(0.0);
        out.column_mut(k).fill(0.0);
        out[(k, k)] = var;
    }
    out
}
