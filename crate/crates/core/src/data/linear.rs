//! Linear regression designs `y = θ*ᵀx + ε`.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::gaussian::{replace_coordinates, validate_cov, Factor};
use super::{bivariate, normal_matrix, CoordinateLaw, Moments, Projections};
use crate::error::check_dim;
use crate::rng::Rng;
use crate::{Error, Result};

/// `x ~ N(μ_x, C_x)`, `y = θ*ᵀx + ε`, `ε ~ N(0, σ²)`.
#[derive(Clone, Debug)]
pub struct GaussianLinear {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub theta_star: DVector<f64>,
    pub sigma: f64,
    factor: Factor,
}

impl GaussianLinear {
    pub fn new(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        theta_star: DVector<f64>,
        sigma: f64,
    ) -> Result<Self> {
        let p = mean.len();
        validate_cov(&cov, p, "covariance")?;
        check_dim(p, theta_star.len())?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise level must be >= 0, got {sigma}")));
        }
        let factor = Factor::new(&cov)?;
        Ok(GaussianLinear {
            mean,
            cov,
            theta_star,
            sigma,
            factor,
        })
    }

    /// Centered isotropic design `x ~ N(0, I_p)`.
    pub fn isotropic(theta_star: DVector<f64>, sigma: f64) -> Result<Self> {
        let p = theta_star.len();
        Self::new(DVector::zeros(p), DMatrix::identity(p, p), theta_star, sigma)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn moments(&self) -> Moments {
        Moments {
            mean: self.mean.clone(),
            cov: self.cov.clone(),
        }
    }

    fn noise(&self, rng: &mut Rng) -> f64 {
        let g: f64 = rng.sample(StandardNormal);
        self.sigma * g
    }

    fn centered(&self, rng: &mut Rng, count: usize) -> DMatrix<f64> {
        self.factor.apply(normal_matrix(rng, self.dim(), count))
    }

    pub(crate) fn draw(&self, rng: &mut Rng, count: usize) -> (DMatrix<f64>, Vec<f64>) {
        let mut x = self.centered(rng, count);
        for mut col in x.column_iter_mut() {
            col += &self.mean;
        }
        let eps: Vec<f64> = (0..count).map(|_| self.noise(rng)).collect();
        let y = labels(&x, &self.theta_star, &eps);
        (x, y)
    }

    pub(crate) fn project(&self, u: &DVector<f64>, rng: &mut Rng, count: usize) -> Projections {
        let cu = &self.cov * u;
        let ct = &self.cov * &self.theta_star;
        let (vuu, vut, vtt) = (u.dot(&cu), u.dot(&ct), self.theta_star.dot(&ct));
        let (mu_u, mu_t) = (u.dot(&self.mean), self.theta_star.dot(&self.mean));
        let mut out = Projections {
            proj: Vec::with_capacity(count),
            labels: Vec::with_capacity(count),
        };
        for _ in 0..count {
            let (a, b) = bivariate(rng, vuu, vut, vtt);
            out.proj.push(mu_u + a);
            out.labels.push(mu_t + b + self.noise(rng));
        }
        out
    }

    /// Pairs `(μ + g, μ − g)` with noises `(ε, −ε)`. `overwrite` replaces
    /// coordinate `k` by an independent centered law, mirrored as well.
    pub(crate) fn antithetic(
        &self,
        pairs: usize,
        rng: &mut Rng,
        overwrite: Option<(usize, CoordinateLaw)>,
    ) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let half = self.centered(rng, pairs);
        let mut x = DMatrix::zeros(self.dim(), 2 * pairs);
        let mut eps = Vec::with_capacity(2 * pairs);
        for j in 0..pairs {
            let mut g = half.column(j).into_owned();
            if let Some((k, law)) = overwrite {
                g[k] = law.draw(rng);
            }
            x.set_column(2 * j, &(&self.mean + &g));
            x.set_column(2 * j + 1, &(&self.mean - &g));
            let e = self.noise(rng);
            eps.push(e);
            eps.push(-e);
        }
        let y = labels(&x, &self.theta_star, &eps);
        (x, y, eps)
    }
}

pub(crate) fn labels(x: &DMatrix<f64>, theta: &DVector<f64>, eps: &[f64]) -> Vec<f64> {
    let s = x.tr_mul(theta);
    s.iter().zip(eps).map(|(a, e)| a + e).collect()
}

/// [`GaussianLinear`] whose coordinate `index` is replaced by
/// `μ_x[index] + b`, `b ~ ½N(−c, s²) + ½N(c, s²)`, independent of the rest.
#[derive(Clone, Debug)]
pub struct BimodalLinear {
    pub base: GaussianLinear,
    pub index: usize,
    pub law: CoordinateLaw,
}

impl BimodalLinear {
    pub fn new(base: GaussianLinear, index: usize, c: f64, s: f64) -> Result<Self> {
        if index >= base.dim() {
            return Err(Error::InvalidArgument(format!(
                "bimodal coordinate {index} out of range for dimension {}",
                base.dim()
            )));
        }
        let law = CoordinateLaw::Bimodal { c, s };
        law.validate()?;
        Ok(BimodalLinear { base, index, law })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn moments(&self) -> Moments {
        Moments {
            mean: self.base.mean.clone(),
            cov: replace_coordinates(&self.base.cov, &[(self.index, self.law.variance())]),
        }
    }

    pub(crate) fn draw(&self, rng: &mut Rng, count: usize) -> (DMatrix<f64>, Vec<f64>) {
        let (mut x, _) = self.base.draw(rng, count);
        let k = self.index;
        let mut eps = Vec::with_capacity(count);
        for j in 0..count {
            x[(k, j)] = self.base.mean[k] + self.law.draw(rng);
            eps.push(self.base.noise(rng));
        }
        let y = labels(&x, &self.base.theta_star, &eps);
        (x, y)
    }

    pub(crate) fn project(&self, u: &DVector<f64>, rng: &mut Rng, count: usize) -> Projections {
        let k = self.index;
        let (mut u0, mut t0) = (u.clone(), self.base.theta_star.clone());
        u0[k] = 0.0;
        t0[k] = 0.0;
        let cu = &self.base.cov * &u0;
        let ct = &self.base.cov * &t0;
        let (vuu, vut, vtt) = (u0.dot(&cu), u0.dot(&ct), t0.dot(&ct));
        let mean = &self.base.mean;
        let (mu_u, mu_t) = (u.dot(mean), self.base.theta_star.dot(mean));
        let (uk, tk) = (u[k], self.base.theta_star[k]);
        let mut out = Projections {
            proj: Vec::with_capacity(count),
            labels: Vec::with_capacity(count),
        };
        for _ in 0..count {
            let (a, b) = bivariate(rng, vuu, vut, vtt);
            let bk = self.law.draw(rng);
            out.proj.push(mu_u + a + uk * bk);
            out.labels.push(mu_t + b + tk * bk + self.base.noise(rng));
        }
        out
    }

    pub(crate) fn antithetic(&self, pairs: usize, rng: &mut Rng) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
        self.base.antithetic(pairs, rng, Some((self.index, self.law)))
    }
}
