//! Deterministic equivalents for resolvents of sample covariance matrices.
//!
//! With `Q(ν) = (νC_x + H)⁻¹` and normalisation `1/n`:
//!
//! * `κ(ν) = (1/n) tr(C_x Q(ν))`
//! * `A(ν) = (1/n) tr(C_x Q(ν) C_x Q(ν))`
//! * `Q₂(B) = QBQ + [(ν²/n) tr(C_x QBQ) / (1 − ν²A(ν))] · QC_xQ`
//!
//! The scalar functionals are evaluated through the generalized
//! eigen-decomposition of the pencil `(C_x, H)`, computed once per context,
//! which makes them `O(p)` per call.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::check_dim;
use crate::linalg;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct ResolventContext {
    pub cov: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub n: usize,
    /// eigenvalues of `L⁻¹ C_x L⁻ᵀ` where `H = L Lᵀ`
    pencil: DVector<f64>,
}

impl ResolventContext {
    pub fn new(cov: DMatrix<f64>, h: DMatrix<f64>, n: usize) -> Result<Self> {
        let p = cov.nrows();
        check_dim(p, cov.ncols())?;
        check_dim(p, h.nrows())?;
        check_dim(p, h.ncols())?;
        if n == 0 {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        if p == 0 {
            return Ok(ResolventContext {
                cov,
                h,
                n,
                pencil: DVector::zeros(0),
            });
        }
        for (m, what) in [(&cov, "covariance"), (&h, "regularizer hessian")] {
            if (m - m.transpose()).amax() > 1e-10 * m.amax().max(1.0) {
                return Err(Error::InvalidArgument(format!("{what} is not symmetric")));
            }
        }
        let l = linalg::cholesky(&h, "regularizer hessian")?.l();
        let half = l
            .solve_lower_triangular(&cov)
            .ok_or(Error::NotPositiveDefinite("regularizer hessian"))?;
        let s = l
            .solve_lower_triangular(&half.transpose())
            .ok_or(Error::NotPositiveDefinite("regularizer hessian"))?;
        let pencil = SymmetricEigen::new(linalg::symmetrize(&s)).eigenvalues;
        if pencil.min() < -1e-10 * pencil.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite("covariance"));
        }
        Ok(ResolventContext {
            cov,
            h,
            n,
            pencil: pencil.map(|v| v.max(0.0)),
        })
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    /// `Q(ν) = (νC_x + H)⁻¹` via a Cholesky factorisation.
    pub fn resolvent(&self, nu: f64) -> Result<DMatrix<f64>> {
        check_nu(nu)?;
        let m = &self.cov * nu + &self.h;
        let q = linalg::cholesky(&m, "nu C_x + H")?.inverse();
        Ok(linalg::symmetrize(&q))
    }

    /// `κ(ν) = (1/n) tr(C_x Q(ν))`.
    pub fn kappa_of_nu(&self, nu: f64) -> f64 {
        self.pencil.iter().map(|&l| l / (1.0 + nu * l)).sum::<f64>() / self.n as f64
    }

    /// `A(ν) = (1/n) tr(C_x Q(ν) C_x Q(ν))`.
    pub fn a_of_nu(&self, nu: f64) -> f64 {
        self.pencil
            .iter()
            .map(|&l| (l / (1.0 + nu * l)).powi(2))
            .sum::<f64>()
            / self.n as f64
    }

    /// The root of `ν = 1 / (1 + κ(ν))` in `(0, 1]`, by bisection on the
    /// increasing function `g(ν) = ν(1 + κ(ν)) − 1`.
    pub fn solve_nu_ridge(&self) -> f64 {
        let g = |nu: f64| nu * (1.0 + self.kappa_of_nu(nu)) - 1.0;
        let (mut lo, mut hi) = (1e-12, 1.0);
        if g(hi) <= 0.0 {
            return 1.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Second-order equivalent `Q₂(B)` of `R B R`.
    pub fn q2_equiv(&self, nu: f64, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), b.nrows())?;
        check_dim(self.dim(), b.ncols())?;
        let denom = 1.0 - nu * nu * self.a_of_nu(nu);
        if denom <= 0.0 {
            return Err(Error::ValidityBoundary(denom));
        }
        let q = self.resolvent(nu)?;
        let qbq = &q * b * &q;
        let qcq = &q * &self.cov * &q;
        let coef = nu * nu * linalg::trace_of_product(&self.cov, &qbq) / self.n as f64 / denom;
        Ok(linalg::symmetrize(&(qbq + qcq * coef)))
    }
}

fn check_nu(nu: f64) -> Result<()> {
    if nu >= 0.0 && nu.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("nu must be >= 0, got {nu}")))
    }
}

/// `R = ((1/n) X Xᵀ + λI)⁻¹` for a `p × n` data matrix.
pub fn empirical_resolvent(x: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let (p, n) = x.shape();
    let mut m = if n > 0 { x * x.transpose() / n as f64 } else { DMatrix::zeros(p, p) };
    for i in 0..p {
        m[(i, i)] += lambda;
    }
    Ok(linalg::symmetrize(&linalg::cholesky(&m, "sample covariance + lambda I")?.inverse()))
}
