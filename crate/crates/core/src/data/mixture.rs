//! Class mixtures with optional non-Gaussian coordinates.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::gaussian::{replace_coordinates, validate_cov, Factor};
use super::{normal_matrix, ClassMoments, CoordinateLaw, Moments, Projections};
use crate::error::check_dim;
use crate::rng::Rng;
use crate::{Error, Result};

/// One mixture component. Given the class, `x = μ + g` with `g ~ N(0, C)`,
/// except that each tagged coordinate `k` is replaced by `μ[k] + b` with
/// `b` drawn from its [`CoordinateLaw`], independently of everything else.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpec {
    pub prior: f64,
    pub label: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub tags: Vec<(usize, CoordinateLaw)>,
}

#[derive(Clone, Debug)]
pub struct MixtureClasses {
    pub classes: Vec<ClassSpec>,
    factors: Vec<Factor>,
}

impl MixtureClasses {
    pub fn new(classes: Vec<ClassSpec>) -> Result<Self> {
        let Some(first) = classes.first() else {
            return Err(Error::InvalidArgument("a mixture needs at least one class".into()));
        };
        let p = first.mean.len();
        let total: f64 = classes.iter().map(|c| c.prior).sum();
        if (total - 1.0).abs() > 1e-9 || classes.iter().any(|c| !(c.prior > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "class priors must be positive and sum to 1 (sum = {total})"
            )));
        }
        let mut factors = Vec::with_capacity(classes.len());
        for c in &classes {
            check_dim(p, c.mean.len())?;
            validate_cov(&c.cov, p, "class covariance")?;
            if c.label != 1.0 && c.label != -1.0 {
                return Err(Error::InvalidLabel {
                    label: c.label,
                    family: "binary mixture",
                });
            }
            for &(k, law) in &c.tags {
                if k >= p {
                    return Err(Error::InvalidArgument(format!("tagged coordinate {k} out of range")));
                }
                law.validate()?;
            }
            factors.push(Factor::new(&c.cov)?);
        }
        Ok(MixtureClasses { classes, factors })
    }

    /// Two classes with priors `(γ₋, γ₊)`, means `∓m`, common covariance.
    pub fn symmetric_binary(m: DVector<f64>, cov: DMatrix<f64>, prior_pos: f64) -> Result<Self> {
        Self::new(vec![
            ClassSpec {
                prior: 1.0 - prior_pos,
                label: -1.0,
                mean: -m.clone(),
                cov: cov.clone(),
                tags: Vec::new(),
            },
            ClassSpec {
                prior: prior_pos,
                label: 1.0,
                mean: m,
                cov,
                tags: Vec::new(),
            },
        ])
    }

    /// Tags coordinate `k` of every class with `law`.
    pub fn with_tag(mut self, k: usize, law: CoordinateLaw) -> Result<Self> {
        for c in &mut self.classes {
            c.tags.retain(|&(j, _)| j != k);
            c.tags.push((k, law));
        }
        Self::new(self.classes)
    }

    pub fn dim(&self) -> usize {
        self.classes[0].mean.len()
    }

    pub fn class_moments(&self) -> Vec<ClassMoments> {
        self.classes
            .iter()
            .map(|c| {
                let tags: Vec<(usize, f64)> = c.tags.iter().map(|&(k, l)| (k, l.variance())).collect();
                ClassMoments {
                    label: c.label,
                    prior: c.prior,
                    moments: Moments {
                        mean: c.mean.clone(),
                        cov: replace_coordinates(&c.cov, &tags),
                    },
                }
            })
            .collect()
    }

    /// Law of total variance over the classes.
    pub fn moments(&self) -> Moments {
        let p = self.dim();
        let cm = self.class_moments();
        let mut mean = DVector::zeros(p);
        let mut second = DMatrix::zeros(p, p);
        for c in &cm {
            mean += &c.moments.mean * c.prior;
            second += c.moments.second_moment() * c.prior;
        }
        let cov = second - &mean * mean.transpose();
        Moments {
            cov: (&cov + cov.transpose()) * 0.5,
            mean,
        }
    }

    fn pick(&self, rng: &mut Rng) -> usize {
        let r: f64 = rng.random();
        let mut acc = 0.0;
        for (i, c) in self.classes.iter().enumerate() {
            acc += c.prior;
            if r < acc {
                return i;
            }
        }
        self.classes.len() - 1
    }

    fn centered(&self, class: usize, rng: &mut Rng, count: usize) -> DMatrix<f64> {
        let mut g = self.factors[class].apply(normal_matrix(rng, self.dim(), count));
        for j in 0..count {
            for &(k, law) in &self.classes[class].tags {
                g[(k, j)] = law.draw(rng);
            }
        }
        g
    }

    pub(crate) fn draw(&self, rng: &mut Rng, count: usize) -> (DMatrix<f64>, Vec<f64>) {
        let p = self.dim();
        let mut x = DMatrix::zeros(p, count);
        let mut y = Vec::with_capacity(count);
        for j in 0..count {
            let l = self.pick(rng);
            let g = self.centered(l, rng, 1);
            x.set_column(j, &(&self.classes[l].mean + g.column(0)));
            y.push(self.classes[l].label);
        }
        (x, y)
    }

    pub(crate) fn project(&self, u: &DVector<f64>, rng: &mut Rng, count: usize) -> Projections {
        // per class: mean shift, Gaussian part, tagged coordinates
        let parts: Vec<(f64, f64)> = self
            .classes
            .iter()
            .map(|c| {
                let mut u0 = u.clone();
                for &(k, _) in &c.tags {
                    u0[k] = 0.0;
                }
                (u.dot(&c.mean), u0.dot(&(&c.cov * &u0)).max(0.0).sqrt())
            })
            .collect();
        let mut out = Projections {
            proj: Vec::with_capacity(count),
            labels: Vec::with_capacity(count),
        };
        for _ in 0..count {
            let l = self.pick(rng);
            let c = &self.classes[l];
            let g: f64 = rng.sample(StandardNormal);
            let mut s = parts[l].0 + parts[l].1 * g;
            for &(k, law) in &c.tags {
                s += u[k] * law.draw(rng);
            }
            out.proj.push(s);
            out.labels.push(c.label);
        }
        out
    }

    pub(crate) fn antithetic(&self, class: usize, pairs: usize, rng: &mut Rng) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let c = &self.classes[class];
        let g = self.centered(class, rng, pairs);
        let mut x = DMatrix::zeros(self.dim(), 2 * pairs);
        for j in 0..pairs {
            x.set_column(2 * j, &(&c.mean + g.column(j)));
            x.set_column(2 * j + 1, &(&c.mean - g.column(j)));
        }
        (x, vec![c.label; 2 * pairs], Vec::new())
    }
}
