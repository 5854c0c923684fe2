//! Smooth strongly convex penalties and their quadratic surrogates.
//!
//! Every penalty here is `C²` with `∇²ρ ⪰ c·I` for some `c > 0`. The
//! surrogate built at a point `μ` is the quadratic
//! `ρ_q(θ) = aᵀθ + ½θᵀH_ρθ` with `H_ρ = ∇²ρ(0)` and `a = ∇ρ(μ) − H_ρμ`,
//! which matches the gradient of `ρ` at `μ` and its curvature at the origin.

use nalgebra::{DMatrix, DVector};

use crate::error::check_dim;
use crate::linalg;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Regularizer {
    /// `aᵀθ + ½θᵀHθ`, `H` symmetric positive definite.
    Quadratic { shift: DVector<f64>, hessian: DMatrix<f64> },
    /// `λ‖θ‖²`
    Ridge { lambda: f64, dim: usize },
    /// `aᵀθ + λ‖θ‖²`
    ShiftedRidge { shift: DVector<f64>, lambda: f64 },
    /// `aᵀθ + λ‖θ‖² + ε Σᵢ (√(1 + θᵢ²) − 1)`
    SmoothSeparable {
        shift: DVector<f64>,
        lambda: f64,
        eps: f64,
    },
}

/// Pseudo-Huber bump `√(1 + t²) − 1` and its first three derivatives.
pub mod bump {
    pub fn value(t: f64) -> f64 {
        // t²/(√(1+t²)+1) avoids cancellation near zero
        t * t / ((1.0 + t * t).sqrt() + 1.0)
    }

    pub fn d1(t: f64) -> f64 {
        t / (1.0 + t * t).sqrt()
    }

    pub fn d2(t: f64) -> f64 {
        (1.0 + t * t).powf(-1.5)
    }

    pub fn d3(t: f64) -> f64 {
        -3.0 * t * (1.0 + t * t).powf(-2.5)
    }
}

impl Regularizer {
    pub fn ridge(lambda: f64, dim: usize) -> Result<Self> {
        positive("lambda", lambda)?;
        Ok(Regularizer::Ridge { lambda, dim })
    }

    pub fn shifted_ridge(shift: DVector<f64>, lambda: f64) -> Result<Self> {
        positive("lambda", lambda)?;
        Ok(Regularizer::ShiftedRidge { shift, lambda })
    }

    /// `eps` may be negative as long as the penalty stays strongly convex,
    /// i.e. `2λ + min(eps, 0) > 0`.
    pub fn smooth_separable(shift: DVector<f64>, lambda: f64, eps: f64) -> Result<Self> {
        positive("lambda", lambda)?;
        if !eps.is_finite() || 2.0 * lambda + eps.min(0.0) <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "eps = {eps} breaks strong convexity for lambda = {lambda}"
            )));
        }
        Ok(Regularizer::SmoothSeparable { shift, lambda, eps })
    }

    pub fn quadratic(shift: DVector<f64>, hessian: DMatrix<f64>) -> Result<Self> {
        check_dim(shift.len(), hessian.nrows())?;
        check_dim(hessian.nrows(), hessian.ncols())?;
        let asym = (&hessian - hessian.transpose()).amax();
        if asym > 1e-10 * hessian.amax().max(1.0) {
            return Err(Error::InvalidArgument("quadratic hessian is not symmetric".into()));
        }
        linalg::cholesky(&hessian, "regularizer hessian")?;
        Ok(Regularizer::Quadratic { shift, hessian })
    }

    pub fn dim(&self) -> usize {
        match self {
            Regularizer::Quadratic { shift, .. }
            | Regularizer::ShiftedRidge { shift, .. }
            | Regularizer::SmoothSeparable { shift, .. } => shift.len(),
            Regularizer::Ridge { dim, .. } => *dim,
        }
    }

    pub fn is_quadratic(&self) -> bool {
        !matches!(self, Regularizer::SmoothSeparable { .. })
    }

    /// The linear coefficient `a = ∇ρ(0)`.
    pub fn shift(&self) -> DVector<f64> {
        match self {
            Regularizer::Quadratic { shift, .. }
            | Regularizer::ShiftedRidge { shift, .. }
            | Regularizer::SmoothSeparable { shift, .. } => shift.clone(),
            Regularizer::Ridge { dim, .. } => DVector::zeros(*dim),
        }
    }

    pub fn value(&self, theta: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        Ok(match self {
            Regularizer::Quadratic { shift, hessian } => {
                shift.dot(theta) + 0.5 * theta.dot(&(hessian * theta))
            }
            Regularizer::Ridge { lambda, .. } => lambda * theta.norm_squared(),
            Regularizer::ShiftedRidge { shift, lambda } => {
                shift.dot(theta) + lambda * theta.norm_squared()
            }
            Regularizer::SmoothSeparable { shift, lambda, eps } => {
                shift.dot(theta)
                    + lambda * theta.norm_squared()
                    + eps * theta.iter().map(|&t| bump::value(t)).sum::<f64>()
            }
        })
    }

    pub fn grad(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), theta.len())?;
        Ok(match self {
            Regularizer::Quadratic { shift, hessian } => shift + hessian * theta,
            Regularizer::Ridge { lambda, .. } => theta * (2.0 * lambda),
            Regularizer::ShiftedRidge { shift, lambda } => shift + theta * (2.0 * lambda),
            Regularizer::SmoothSeparable { shift, lambda, eps } => {
                shift + theta.map(|t| 2.0 * lambda * t + eps * bump::d1(t))
            }
        })
    }

    pub fn hess(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), theta.len())?;
        Ok(match self {
            Regularizer::SmoothSeparable { lambda, eps, .. } => {
                DMatrix::from_diagonal(&theta.map(|t| 2.0 * lambda + eps * bump::d2(t)))
            }
            _ => self.hess0(),
        })
    }

    /// `H_ρ = ∇²ρ(0)`.
    pub fn hess0(&self) -> DMatrix<f64> {
        let p = self.dim();
        match self {
            Regularizer::Quadratic { hessian, .. } => hessian.clone(),
            Regularizer::Ridge { lambda, .. } | Regularizer::ShiftedRidge { lambda, .. } => {
                DMatrix::identity(p, p) * (2.0 * lambda)
            }
            Regularizer::SmoothSeparable { lambda, eps, .. } => {
                DMatrix::identity(p, p) * (2.0 * lambda + eps)
            }
        }
    }

    /// A lower bound `c > 0` with `∇²ρ(θ) ⪰ c·I` everywhere.
    pub fn strong_convexity(&self) -> f64 {
        match self {
            Regularizer::Quadratic { hessian, .. } => linalg::sym_extreme_eigenvalues(hessian).0,
            Regularizer::Ridge { lambda, .. } | Regularizer::ShiftedRidge { lambda, .. } => {
                2.0 * lambda
            }
            // bump'' ranges over (0, 1]
            Regularizer::SmoothSeparable { lambda, eps, .. } => 2.0 * lambda + eps.min(0.0),
        }
    }

    /// `Quadratic(a = ∇ρ(μ) − H_ρμ, H = H_ρ)`.
    pub fn quadratic_surrogate(&self, mu: &DVector<f64>) -> Result<Regularizer> {
        let h = self.hess0();
        let a = self.grad(mu)? - &h * mu;
        Ok(Regularizer::Quadratic {
            shift: a,
            hessian: h,
        })
    }

    /// `(a, H)` of a quadratic penalty; `None` for non-quadratic kinds.
    pub fn quadratic_parts(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        if self.is_quadratic() {
            Some((self.shift(), self.hess0()))
        } else {
            None
        }
    }

    /// Same penalty with its ridge strength replaced. Quadratic penalties have
    /// no single strength and are rejected.
    pub fn with_lambda(&self, lambda: f64) -> Result<Regularizer> {
        positive("lambda", lambda)?;
        Ok(match self {
            Regularizer::Ridge { dim, .. } => Regularizer::Ridge { lambda, dim: *dim },
            Regularizer::ShiftedRidge { shift, .. } => Regularizer::ShiftedRidge {
                shift: shift.clone(),
                lambda,
            },
            Regularizer::SmoothSeparable { shift, eps, .. } => {
                Regularizer::smooth_separable(shift.clone(), lambda, *eps)?
            }
            Regularizer::Quadratic { .. } => {
                return Err(Error::InvalidArgument(
                    "a general quadratic penalty has no lambda to vary".into(),
                ))
            }
        })
    }

    /// Same penalty with its linear coefficient replaced.
    pub fn with_shift(&self, a: DVector<f64>) -> Result<Regularizer> {
        check_dim(self.dim(), a.len())?;
        Ok(match self {
            Regularizer::Quadratic { hessian, .. } => Regularizer::Quadratic {
                shift: a,
                hessian: hessian.clone(),
            },
            Regularizer::Ridge { lambda, .. } | Regularizer::ShiftedRidge { lambda, .. } => {
                Regularizer::ShiftedRidge {
                    shift: a,
                    lambda: *lambda,
                }
            }
            Regularizer::SmoothSeparable { lambda, eps, .. } => Regularizer::SmoothSeparable {
                shift: a,
                lambda: *lambda,
                eps: *eps,
            },
        })
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}
