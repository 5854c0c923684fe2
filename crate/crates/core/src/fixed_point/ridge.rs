use nalgebra::{DMatrix, DVector};

use crate::data::Moments;
use crate::error::check_dim;
use crate::linalg;
use crate::rmt::ResolventContext;
use crate::{Error, Result};

/// Closed-form solution of the system for squared loss.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeClosedForm {
    pub nu_star: f64,
    pub kappa_star: f64,
    /// `A(ν*)`
    pub a_star: f64,
    /// `μ(ν*) = (H + ν*Σ_x)⁻¹(ν*Σ_x θ* − a)`
    pub mu_of_nu: DVector<f64>,
    /// `Δ = (μ − θ*)ᵀ Σ_x (μ − θ*)`
    pub delta: f64,
    pub alpha_sq: f64,
    /// excess test risk `Δ + α²`, i.e. `E[(xᵀθ̂ − y)²] − σ²`
    pub gen_error: f64,
}

/// Squared loss with `ρ(θ) = aᵀθ + ½θᵀHθ`. `Σ_x = C_x + μ_xμ_xᵀ` is the
/// uncentered second moment; it reduces to `C_x` for centered designs.
pub fn ridge_closed_form(
    moments: &Moments,
    theta_star: &DVector<f64>,
    sigma: f64,
    a: &DVector<f64>,
    h: &DMatrix<f64>,
    n: usize,
) -> Result<RidgeClosedForm> {
    let p = moments.mean.len();
    check_dim(p, theta_star.len())?;
    check_dim(p, a.len())?;
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument("noise level must be nonnegative".into()));
    }
    let ctx = ResolventContext::new(moments.cov.clone(), h.clone(), n)?;
    let nu = ctx.solve_nu_ridge();
    let kappa = ctx.kappa_of_nu(nu);
    let a_nu = ctx.a_of_nu(nu);
    let margin = 1.0 - nu * nu * a_nu;
    if !(margin > 0.0) {
        return Err(Error::ValidityBoundary(margin));
    }
    let second = moments.second_moment();
    let lhs = h + &second * nu;
    let rhs = &second * theta_star * nu - a;
    let mu = linalg::cholesky(&lhs, "H + ν Σ_x")?.solve(&rhs);
    let err = &mu - theta_star;
    let delta = err.dot(&(&second * &err)).max(0.0);
    let alpha_sq = nu * nu * a_nu * (delta + sigma * sigma) / margin;
    let gen_error = (nu * nu * a_nu * sigma * sigma + delta) / margin;
    Ok(RidgeClosedForm {
        nu_star: nu,
        kappa_star: kappa,
        a_star: a_nu,
        mu_of_nu: mu,
        delta,
        alpha_sq,
        gen_error,
    })
}
