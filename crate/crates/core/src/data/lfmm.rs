//! Linear factor mixture model.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{normal_matrix, ClassMoments, CoordinateLaw, Moments, Projections};
use crate::error::check_dim;
use crate::linalg;
use crate::rng::Rng;
use crate::{Error, Result};

/// `x = Σᵢ≤q (y sᵢ + eᵢ) vᵢ + (I − P_F) g` with `y = ±1`, `F = span(v₁..v_q)`,
/// unit-variance factor noises `eᵢ` and `g ~ N(0, I_p)`.
///
/// Equivalently `x = Σᵢ (y sᵢ + eᵢ) vᵢ` over an orthonormal completion of
/// the `vᵢ` with `sᵢ = 0` and Gaussian `eᵢ` beyond `q`. Non-Gaussian factor
/// laws are rescaled to unit variance, so each class has covariance `I_p`.
#[derive(Clone, Debug)]
pub struct Lfmm {
    pub directions: Vec<DVector<f64>>,
    pub signal: Vec<f64>,
    pub noise: Vec<CoordinateLaw>,
    /// `P(y = +1)`
    pub prior_pos: f64,
    p: usize,
}

impl Lfmm {
    pub fn new(
        p: usize,
        directions: Vec<DVector<f64>>,
        signal: Vec<f64>,
        noise: Vec<CoordinateLaw>,
        prior_pos: f64,
    ) -> Result<Self> {
        let q = directions.len();
        check_dim(q, signal.len())?;
        check_dim(q, noise.len())?;
        if !(prior_pos > 0.0 && prior_pos < 1.0) {
            return Err(Error::InvalidArgument(format!("class prior must lie in (0, 1), got {prior_pos}")));
        }
        for (i, v) in directions.iter().enumerate() {
            check_dim(p, v.len())?;
            for (j, w) in directions.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                if (v.dot(w) - target).abs() > 1e-10 {
                    return Err(Error::InvalidArgument("LFMM directions must be orthonormal".into()));
                }
            }
        }
        for law in &noise {
            law.validate()?;
        }
        Ok(Lfmm {
            directions,
            signal,
            noise,
            prior_pos,
            p,
        })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    /// `m = Σ sᵢvᵢ`, the class mean of `y = +1`.
    pub fn signal_vector(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.p);
        for (v, s) in self.directions.iter().zip(&self.signal) {
            m.axpy(*s, v, 1.0);
        }
        m
    }

    pub fn class_moments(&self) -> Vec<ClassMoments> {
        let m = self.signal_vector();
        [(-1.0, 1.0 - self.prior_pos), (1.0, self.prior_pos)]
            .into_iter()
            .map(|(label, prior)| ClassMoments {
                label,
                prior,
                moments: Moments {
                    mean: &m * label,
                    cov: DMatrix::identity(self.p, self.p),
                },
            })
            .collect()
    }

    pub fn moments(&self) -> Moments {
        let m = self.signal_vector();
        let ey = 2.0 * self.prior_pos - 1.0;
        let var_y = 1.0 - ey * ey;
        Moments {
            mean: &m * ey,
            cov: DMatrix::identity(self.p, self.p) + &m * m.transpose() * var_y,
        }
    }

    fn label(&self, rng: &mut Rng) -> f64 {
        if rng.random::<f64>() < self.prior_pos {
            1.0
        } else {
            -1.0
        }
    }

    /// `(I − P_F) g` for the columns of `g`.
    fn project_out(&self, basis: &[DVector<f64>], g: &mut DMatrix<f64>) {
        for mut col in g.column_iter_mut() {
            for v in basis {
                let c = v.dot(&col);
                col.axpy(-c, v, 1.0);
            }
        }
    }

    fn informative(&self, y: f64, rng: &mut Rng) -> DVector<f64> {
        let mut x = DVector::zeros(self.p);
        for ((v, s), law) in self.directions.iter().zip(&self.signal).zip(&self.noise) {
            x.axpy(y * s + law.draw_standardized(rng), v, 1.0);
        }
        x
    }

    pub(crate) fn draw(&self, rng: &mut Rng, count: usize) -> (DMatrix<f64>, Vec<f64>) {
        let mut x = normal_matrix(rng, self.p, count);
        self.project_out(&self.directions, &mut x);
        let mut y = Vec::with_capacity(count);
        for j in 0..count {
            let label = self.label(rng);
            let inf = self.informative(label, rng);
            let mut col = x.column_mut(j);
            col += inf;
            y.push(label);
        }
        (x, y)
    }

    pub(crate) fn project(&self, u: &DVector<f64>, rng: &mut Rng, count: usize) -> Projections {
        let coeffs: Vec<f64> = self.directions.iter().map(|v| v.dot(u)).collect();
        let resid = (u.norm_squared() - coeffs.iter().map(|c| c * c).sum::<f64>()).max(0.0).sqrt();
        let mut out = Projections {
            proj: Vec::with_capacity(count),
            labels: Vec::with_capacity(count),
        };
        for _ in 0..count {
            let y = self.label(rng);
            let g: f64 = rng.sample(StandardNormal);
            let mut s = resid * g;
            for ((c, sig), law) in coeffs.iter().zip(&self.signal).zip(&self.noise) {
                s += c * (y * sig + law.draw_standardized(rng));
            }
            out.proj.push(s);
            out.labels.push(y);
        }
        out
    }

    /// Pairs share the label and the informative factors; the isotropic
    /// noise is reflected through `F + span(preserve)`, which leaves its law
    /// unchanged.
    pub(crate) fn antithetic(
        &self,
        class: usize,
        pairs: usize,
        rng: &mut Rng,
        preserve: &[DVector<f64>],
    ) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let label = if class == 0 { -1.0 } else { 1.0 };
        let mut spanning = self.directions.clone();
        spanning.extend(preserve.iter().cloned());
        let fixed = linalg::orthonormal_basis(&spanning, 1e-10);

        let mut noise = normal_matrix(rng, self.p, pairs);
        self.project_out(&self.directions, &mut noise);
        let mut x = DMatrix::zeros(self.p, 2 * pairs);
        for j in 0..pairs {
            let inf = self.informative(label, rng);
            let g = noise.column(j).into_owned();
            // split g into its part inside the fixed subspace and the rest
            let mut inside = DVector::zeros(self.p);
            for b in &fixed {
                inside.axpy(b.dot(&g), b, 1.0);
            }
            let outside = &g - &inside;
            let base = &inf + &inside;
            x.set_column(2 * j, &(&base + &outside));
            x.set_column(2 * j + 1, &(&base - &outside));
        }
        (x, vec![label; 2 * pairs], Vec::new())
    }
}
