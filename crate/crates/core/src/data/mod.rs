//! Generative data designs.
//!
//! Every design produces pairs `(x, y)` with `x ∈ Rᵖ`. Regression designs
//! draw `y = θ*ᵀx + ε` with `ε ~ N(0, σ²)`; classification designs draw a
//! class first and use labels in `{−1, +1}`.
//!
//! Each design exposes exact first and second moments, per-class moments
//! where classes exist, an i.i.d. sampler, and a sampler for the scalar
//! projection `uᵀx` that avoids drawing full vectors when the law allows it.

mod empirical;
mod gaussian;
mod lfmm;
mod linear;
mod mixture;

pub(crate) use linear::labels as regression_labels;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

pub use crate::loss::LabelSpace;
pub use empirical::{load_csv, Empirical};
pub use lfmm::Lfmm;
pub use linear::{BimodalLinear, GaussianLinear};
pub use mixture::{ClassSpec, MixtureClasses};

use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Mean and covariance of a random vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Moments {
    /// `Σ = C + μμᵀ`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.cov + &self.mean * self.mean.transpose()
    }
}

/// Moments of one class together with its prior and label.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMoments {
    pub label: f64,
    pub prior: f64,
    pub moments: Moments,
}

/// Law of a single coordinate that deviates from Gaussianity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CoordinateLaw {
    Gaussian,
    /// `½N(−c, s²) + ½N(c, s²)`
    Bimodal { c: f64, s: f64 },
}

impl CoordinateLaw {
    /// The default bimodal component, `c = 3`, `s = 0.5`.
    pub const BIMODAL: CoordinateLaw = CoordinateLaw::Bimodal { c: 3.0, s: 0.5 };

    pub fn variance(&self) -> f64 {
        match *self {
            CoordinateLaw::Gaussian => 1.0,
            CoordinateLaw::Bimodal { c, s } => c * c + s * s,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match *self {
            CoordinateLaw::Gaussian => Ok(()),
            CoordinateLaw::Bimodal { c, s } if c.is_finite() && s.is_finite() && s >= 0.0 && c * c + s * s > 0.0 => Ok(()),
            CoordinateLaw::Bimodal { c, s } => Err(Error::InvalidArgument(format!(
                "invalid bimodal parameters c = {c}, s = {s}"
            ))),
        }
    }

    /// One centered draw with the law's own variance.
    pub(crate) fn draw(&self, rng: &mut Rng) -> f64 {
        let g: f64 = rng.sample(StandardNormal);
        match *self {
            CoordinateLaw::Gaussian => g,
            CoordinateLaw::Bimodal { c, s } => {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * c + s * g
            }
        }
    }

    /// One draw rescaled to unit variance.
    pub(crate) fn draw_standardized(&self, rng: &mut Rng) -> f64 {
        self.draw(rng) / self.variance().sqrt()
    }
}

/// A draw of `n` samples, one per column of `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

/// Scalar projections `uᵀx` paired with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Projections {
    pub proj: Vec<f64>,
    pub labels: Vec<f64>,
}

#[derive(Clone, Debug)]
pub enum DataModel {
    GaussianLinear(GaussianLinear),
    BimodalLinear(BimodalLinear),
    MixtureClasses(MixtureClasses),
    Lfmm(Lfmm),
    Empirical(Empirical),
}

const CHUNK: usize = 1024;

impl DataModel {
    pub fn dim(&self) -> usize {
        match self {
            DataModel::GaussianLinear(m) => m.dim(),
            DataModel::BimodalLinear(m) => m.dim(),
            DataModel::MixtureClasses(m) => m.dim(),
            DataModel::Lfmm(m) => m.dim(),
            DataModel::Empirical(m) => m.dim(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            DataModel::GaussianLinear(_) => "gaussian_linear",
            DataModel::BimodalLinear(_) => "bimodal_linear",
            DataModel::MixtureClasses(_) => "mixture",
            DataModel::Lfmm(_) => "lfmm",
            DataModel::Empirical(_) => "empirical",
        }
    }

    pub fn label_space(&self) -> LabelSpace {
        match self {
            DataModel::GaussianLinear(_) | DataModel::BimodalLinear(_) => LabelSpace::Real,
            DataModel::MixtureClasses(_) | DataModel::Lfmm(_) => LabelSpace::BinaryPM1,
            DataModel::Empirical(m) => m.label_space(),
        }
    }

    /// `(μ_x, C_x)`: exact for generative designs, plug-in (unbiased
    /// covariance) for empirical data.
    pub fn moments(&self) -> Moments {
        match self {
            DataModel::GaussianLinear(m) => m.moments(),
            DataModel::BimodalLinear(m) => m.moments(),
            DataModel::MixtureClasses(m) => m.moments(),
            DataModel::Lfmm(m) => m.moments(),
            DataModel::Empirical(m) => m.moments(),
        }
    }

    /// Per-class moments, `None` for regression designs.
    pub fn classes(&self) -> Option<Vec<ClassMoments>> {
        match self {
            DataModel::GaussianLinear(_) | DataModel::BimodalLinear(_) => None,
            DataModel::MixtureClasses(m) => Some(m.class_moments()),
            DataModel::Lfmm(m) => Some(m.class_moments()),
            DataModel::Empirical(m) => m.class_moments(),
        }
    }

    /// `(θ*, σ_ε)` of a regression design.
    pub fn regression_target(&self) -> Option<(&DVector<f64>, f64)> {
        match self {
            DataModel::GaussianLinear(m) => Some((&m.theta_star, m.sigma)),
            DataModel::BimodalLinear(m) => Some((&m.base.theta_star, m.base.sigma)),
            _ => None,
        }
    }

    /// `n` i.i.d. samples, deterministic given `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Sample> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be at least 1".into()));
        }
        if let DataModel::Empirical(m) = self {
            return m.subsample(n, seed);
        }
        let p = self.dim();
        let chunks: Vec<(DMatrix<f64>, Vec<f64>)> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let count = CHUNK.min(n - c * CHUNK);
                let mut rng = rng::stream(seed, rng::domain::SAMPLE, c as u64);
                self.draw(&mut rng, count)
            })
            .collect();
        let mut x = DMatrix::zeros(p, n);
        let mut y = DVector::zeros(n);
        for (c, (xc, yc)) in chunks.into_iter().enumerate() {
            let start = c * CHUNK;
            x.columns_mut(start, xc.ncols()).copy_from(&xc);
            y.rows_mut(start, yc.len()).copy_from_slice(&yc);
        }
        Ok(Sample { x, y })
    }

    fn draw(&self, rng: &mut Rng, count: usize) -> (DMatrix<f64>, Vec<f64>) {
        match self {
            DataModel::GaussianLinear(m) => m.draw(rng, count),
            DataModel::BimodalLinear(m) => m.draw(rng, count),
            DataModel::MixtureClasses(m) => m.draw(rng, count),
            DataModel::Lfmm(m) => m.draw(rng, count),
            DataModel::Empirical(_) => unreachable!("empirical data is subsampled, not drawn"),
        }
    }

    /// `m` i.i.d. draws of `(uᵀx, y)`, deterministic given `seed`.
    pub fn projection_samples(&self, u: &DVector<f64>, m: usize, seed: u64) -> Result<Projections> {
        crate::error::check_dim(self.dim(), u.len())?;
        let chunks: Vec<Projections> = (0..m.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let count = CHUNK.min(m - c * CHUNK);
                let mut rng = rng::stream(seed, rng::domain::PROJECTION, c as u64);
                match self {
                    DataModel::GaussianLinear(d) => d.project(u, &mut rng, count),
                    DataModel::BimodalLinear(d) => d.project(u, &mut rng, count),
                    DataModel::MixtureClasses(d) => d.project(u, &mut rng, count),
                    DataModel::Lfmm(d) => d.project(u, &mut rng, count),
                    DataModel::Empirical(d) => d.project(u, &mut rng, count),
                }
            })
            .collect();
        let mut out = Projections {
            proj: Vec::with_capacity(m),
            labels: Vec::with_capacity(m),
        };
        for c in chunks {
            out.proj.extend(c.proj);
            out.labels.extend(c.labels);
        }
        Ok(out)
    }

    /// The Gaussian design with the same first and second moments (per class
    /// for classification designs).
    pub fn gaussian_surrogate(&self) -> Result<DataModel> {
        match self {
            DataModel::GaussianLinear(m) => Ok(DataModel::GaussianLinear(m.clone())),
            DataModel::BimodalLinear(m) => {
                let mo = m.moments();
                Ok(DataModel::GaussianLinear(GaussianLinear::new(
                    mo.mean,
                    mo.cov,
                    m.base.theta_star.clone(),
                    m.base.sigma,
                )?))
            }
            DataModel::MixtureClasses(_) | DataModel::Lfmm(_) | DataModel::Empirical(_) => {
                let classes = self.classes().ok_or_else(|| {
                    Error::InvalidArgument(
                        "no Gaussian surrogate for unlabeled empirical regression data".into(),
                    )
                })?;
                let specs = classes
                    .into_iter()
                    .map(|c| ClassSpec {
                        prior: c.prior,
                        label: c.label,
                        mean: c.moments.mean,
                        cov: c.moments.cov,
                        tags: Vec::new(),
                    })
                    .collect();
                Ok(DataModel::MixtureClasses(MixtureClasses::new(specs)?))
            }
        }
    }

    /// One block of `2·pairs` draws from class `class` (ignored for
    /// regression) arranged as antithetic pairs: columns `2i` and `2i + 1`
    /// are mirror images under a symmetry of the design's noise. Returns
    /// `(x, y, ε)`; `ε` is empty for classification designs.
    ///
    /// For an LFMM the mirror is the reflection through
    /// `span(v₁..v_q) + span(preserve)`.
    pub(crate) fn antithetic_block(
        &self,
        class: usize,
        pairs: usize,
        rng: &mut Rng,
        preserve: &[DVector<f64>],
    ) -> Result<(DMatrix<f64>, Vec<f64>, Vec<f64>)> {
        match self {
            DataModel::GaussianLinear(m) => Ok(m.antithetic(pairs, rng, None)),
            DataModel::BimodalLinear(m) => Ok(m.antithetic(pairs, rng)),
            DataModel::MixtureClasses(m) => Ok(m.antithetic(class, pairs, rng)),
            DataModel::Lfmm(m) => Ok(m.antithetic(class, pairs, rng, preserve)),
            DataModel::Empirical(_) => Err(Error::InvalidArgument(
                "empirical data has no generative law to draw from".into(),
            )),
        }
    }
}

/// Draws a `p × count` matrix of independent standard normals.
pub(crate) fn normal_matrix(rng: &mut Rng, p: usize, count: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(p, count);
    for v in g.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    g
}

/// Draws `(a, b)` jointly Gaussian, centered, with covariance
/// `[[vaa, vab], [vab, vbb]]` (positive semidefinite).
pub(crate) fn bivariate(rng: &mut Rng, vaa: f64, vab: f64, vbb: f64) -> (f64, f64) {
    let g1: f64 = rng.sample(StandardNormal);
    let g2: f64 = rng.sample(StandardNormal);
    let l11 = vaa.max(0.0).sqrt();
    let l21 = if l11 > 0.0 { vab / l11 } else { 0.0 };
    let l22 = (vbb - l21 * l21).max(0.0).sqrt();
    (l11 * g1, l21 * g1 + l22 * g2)
}
