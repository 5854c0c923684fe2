//! Laws of the test score `xᵀθ̂`, approximated by `μ*ᵀx + α*z`.
//!
//! A [`ScoreLaw`] is an equal-weight Gaussian mixture: one component per
//! sampled center `μ*ᵀx_j`, all with standard deviation `α*`. The Gaussian
//! baseline is the one-component case.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::data::{DataModel, Moments};
use crate::fixed_point::FixedPointSolution;
use crate::linalg;
use crate::stats;
use crate::{Error, Result};

/// Components further than this many standard deviations from a query
/// point contribute exactly 0 or 1 to the CDF in double precision.
const TAIL: f64 = 9.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreLaw {
    centers: Vec<f64>,
    alpha: f64,
}

/// One class's score law.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassLaw {
    pub label: f64,
    pub prior: f64,
    pub law: ScoreLaw,
}

impl ScoreLaw {
    pub fn new(mut centers: Vec<f64>, alpha: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidArgument("a score law needs at least one center".into()));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) || centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("score law parameters must be finite, α >= 0".into()));
        }
        centers.sort_by(f64::total_cmp);
        Ok(ScoreLaw { centers, alpha })
    }

    /// `N(mean, sd²)`
    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        Self::new(vec![mean], sd)
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.centers.clone(), alpha)
    }

    pub fn mean(&self) -> f64 {
        stats::mean(&self.centers)
    }

    /// `var(centers) + α²`, with the `1/m` normalisation.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let v = self.centers.iter().map(|c| (c - m).powi(2)).sum::<f64>() / self.centers.len() as f64;
        v + self.alpha * self.alpha
    }

    /// Smallest and largest center.
    pub fn support_hint(&self) -> (f64, f64) {
        (self.centers[0], self.centers[self.centers.len() - 1])
    }

    pub fn cdf(&self, t: f64) -> f64 {
        let m = self.centers.len() as f64;
        if self.alpha == 0.0 {
            return self.centers.partition_point(|&c| c <= t) as f64 / m;
        }
        let lo = self.centers.partition_point(|&c| c < t - TAIL * self.alpha);
        let hi = self.centers.partition_point(|&c| c <= t + TAIL * self.alpha);
        let inner: f64 = self.centers[lo..hi]
            .iter()
            .map(|&c| stats::normal_cdf((t - c) / self.alpha))
            .sum();
        ((lo as f64 + inner) / m).clamp(0.0, 1.0)
    }

    pub fn cdf_many(&self, ts: &[f64]) -> Vec<f64> {
        ts.par_iter().map(|&t| self.cdf(t)).collect()
    }

    pub fn pdf(&self, t: f64) -> Result<f64> {
        if self.alpha == 0.0 {
            return Err(Error::InvalidArgument("the score law has no density when α = 0".into()));
        }
        let lo = self.centers.partition_point(|&c| c < t - TAIL * self.alpha);
        let hi = self.centers.partition_point(|&c| c <= t + TAIL * self.alpha);
        let s: f64 = self.centers[lo..hi]
            .iter()
            .map(|&c| stats::normal_pdf((t - c) / self.alpha))
            .sum();
        Ok(s / (self.alpha * self.centers.len() as f64))
    }

    pub fn pdf_grid(&self, grid: &[f64]) -> Result<Vec<f64>> {
        grid.par_iter().map(|&t| self.pdf(t)).collect()
    }
}

fn projections(model: &DataModel, mu: &DVector<f64>, m: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one test point".into()));
    }
    let p = model.projection_samples(mu, m, seed)?;
    Ok((p.proj, p.labels))
}

/// Mixture over `m` fresh test points, centers `μ*ᵀx_j`, spread `α*`.
pub fn predict(model: &DataModel, sol: &FixedPointSolution, m: usize, seed: u64) -> Result<ScoreLaw> {
    let (proj, _) = projections(model, &sol.mu_star, m, seed)?;
    ScoreLaw::new(proj, sol.alpha_star)
}

/// Same draws as [`predict`], split by label. Class priors come from the
/// model.
pub fn predict_by_class(
    model: &DataModel,
    sol: &FixedPointSolution,
    m: usize,
    seed: u64,
) -> Result<Vec<ClassLaw>> {
    let classes = model.classes().ok_or_else(|| {
        Error::InvalidArgument(format!("{} has no class structure", model.kind_name()))
    })?;
    let (proj, labels) = projections(model, &sol.mu_star, m, seed)?;
    classes
        .into_iter()
        .map(|c| {
            let centers: Vec<f64> = proj
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c.label)
                .map(|(&v, _)| v)
                .collect();
            if centers.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "no test point of class {} among {m}; raise m",
                    c.label
                )));
            }
            Ok(ClassLaw {
                label: c.label,
                prior: c.prior,
                law: ScoreLaw::new(centers, sol.alpha_star)?,
            })
        })
        .collect()
}

/// `N(μ*ᵀE[x], μ*ᵀC_xμ* + α*²)`: the law the score would have if `μ*ᵀx`
/// were Gaussian.
pub fn gaussian_baseline(moments: &Moments, sol: &FixedPointSolution) -> Result<ScoreLaw> {
    crate::error::check_dim(moments.mean.len(), sol.mu_star.len())?;
    let mu = &sol.mu_star;
    let var = mu.dot(&(&moments.cov * mu)) + sol.alpha_star.powi(2);
    ScoreLaw::gaussian(mu.dot(&moments.mean), var.max(0.0).sqrt())
}

/// `γ₀ P(score > τ | class 0) + γ₁ P(score ≤ τ | class 1)`; class 1 is
/// predicted above the threshold.
pub fn classification_error(class0: &ScoreLaw, class1: &ScoreLaw, priors: (f64, f64), threshold: f64) -> f64 {
    priors.0 * (1.0 - class0.cdf(threshold)) + priors.1 * class1.cdf(threshold)
}

/// `count` evenly spaced thresholds over the pooled center range, widened
/// by `3α` on each side.
pub fn threshold_grid(laws: &[&ScoreLaw], count: usize) -> Vec<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for l in laws {
        let (a, b) = l.support_hint();
        lo = lo.min(a - 3.0 * l.alpha);
        hi = hi.max(b + 3.0 * l.alpha);
    }
    if count < 2 || !(hi > lo) {
        return vec![0.5 * (lo + hi); count.min(1)];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// `sup_t |F_emp(t) − F_law(t)|` over the sample points.
pub fn ks_distance(law: &ScoreLaw, samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("KS distance needs samples".into()));
    }
    Ok(ks_smooth(samples, law.alpha, |s| law.cdf_many(s)))
}

/// Grid steps per unit of `α` when a smooth CDF is tabulated.
const STEPS_PER_ALPHA: f64 = 50.0;

/// KS statistic against a CDF whose density has scale at least `alpha`
/// (a mixture of `N(·, α²)` components). When that is cheaper the CDF is
/// tabulated with step `h ≤ α/50` over the sample range and interpolated
/// linearly; the interpolation error is at most `h²·sup|F''|/8 < 1e-5`.
pub fn ks_smooth(samples: &[f64], alpha: f64, cdf: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let steps = ((hi - lo) * STEPS_PER_ALPHA / alpha).ceil();
    if !(alpha > 0.0) || !(hi > lo) || !(steps + 1.0 < samples.len() as f64) {
        return stats::ks_statistic(samples, cdf);
    }
    let steps = steps as usize;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
        .collect();
    let table = cdf(&grid);
    stats::ks_statistic(samples, |s| {
        s.iter()
            .map(|&t| {
                let u = (t - lo) / (hi - lo) * steps as f64;
                let i = (u.floor().max(0.0) as usize).min(steps - 1);
                let w = u - i as f64;
                table[i] * (1.0 - w) + table[i + 1] * w
            })
            .collect()
    })
}

/// `sup_t |F_a(t) − F_b(t)|` on `points` evenly spaced points covering
/// both laws.
pub fn law_distance(a: &ScoreLaw, b: &ScoreLaw, points: usize) -> f64 {
    let grid = threshold_grid(&[a, b], points.max(2));
    let fa = a.cdf_many(&grid);
    let fb = b.cdf_many(&grid);
    fa.iter().zip(&fb).fold(0.0, |d, (x, y)| d.max((x - y).abs()))
}

/// `‖P_⊥ μ‖ / ‖μ‖` with `P_⊥` the projection onto the orthogonal
/// complement of `span(basis ∪ {a})`. Zero for `μ = 0`.
pub fn confinement_residual(mu: &DVector<f64>, basis: &[DVector<f64>], a: &DVector<f64>) -> Result<f64> {
    for b in basis {
        crate::error::check_dim(mu.len(), b.len())?;
    }
    crate::error::check_dim(mu.len(), a.len())?;
    let norm = mu.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let mut span = basis.to_vec();
    span.push(a.clone());
    let q = linalg::orthonormal_basis(&span, 1e-12);
    let mut rest = mu.clone();
    for v in &q {
        rest.axpy(-v.dot(mu), v, 1.0);
    }
    // second pass against cancellation
    for v in &q {
        let c = v.dot(&rest);
        rest.axpy(-c, v, 1.0);
    }
    Ok(rest.norm() / norm)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::data::{BimodalLinear, GaussianLinear};
    use crate::rng;

    fn sol(mu: DVector<f64>, alpha: f64) -> FixedPointSolution {
        FixedPointSolution {
            mu_star: mu,
            alpha_star: alpha,
            kappa_star: 1.0,
            nu_star: 0.5,
            beta_star: 0.0,
            residuals: [0.0; 4],
            iterations: 0,
            converged: true,
            degenerate: false,
        }
    }

    fn e(p: usize, k: usize) -> DVector<f64> {
        let mut v = DVector::zeros(p);
        v[k] = 1.0;
        v
    }

    #[test]
    fn cdf_basics() {
        let law = ScoreLaw::new(vec![1.0], 1.0).unwrap();
        assert_relative_eq!(law.cdf(1.0), 0.5, epsilon = 1e-15);
        assert_eq!(law.cdf(-1e6), 0.0);
        assert_eq!(law.cdf(1e6), 1.0);
        let sym = ScoreLaw::new(vec![-2.0, -0.5, 0.5, 2.0], 0.7).unwrap();
        assert_relative_eq!(sym.cdf(0.0), 0.5, epsilon = 1e-15);
        let step = ScoreLaw::new(vec![0.0, 1.0, 1.0, 3.0], 0.0).unwrap();
        assert_eq!(step.cdf(1.0), 0.75);
        assert_eq!(step.cdf(0.99), 0.25);
        assert!(step.pdf(0.0).is_err());
        assert!(ScoreLaw::new(vec![], 1.0).is_err());
        assert!(ScoreLaw::new(vec![0.0], -1.0).is_err());
    }

    #[test]
    fn tail_cutoff_is_exact() {
        let mut r = rng::stream(3, rng::domain::TEST, 0);
        let centers: Vec<f64> = (0..500).map(|_| 3.0 * r.sample::<f64, _>(StandardNormal)).collect();
        let law = ScoreLaw::new(centers.clone(), 0.4).unwrap();
        for t in [-5.0, -1.0, 0.0, 0.3, 4.0] {
            let brute: f64 = centers.iter().map(|c| stats::normal_cdf((t - c) / 0.4)).sum::<f64>() / 500.0;
            assert_relative_eq!(law.cdf(t), brute, epsilon = 1e-14);
            let dens: f64 = centers.iter().map(|c| stats::normal_pdf((t - c) / 0.4)).sum::<f64>() / (500.0 * 0.4);
            assert_relative_eq!(law.pdf(t).unwrap(), dens, epsilon = 1e-14);
        }
    }

    #[test]
    fn mixture_moments_are_exact() {
        let law = ScoreLaw::new(vec![-1.0, 0.0, 0.5, 2.5], 0.3).unwrap();
        assert_relative_eq!(law.mean(), 0.5, epsilon = 1e-12);
        // var of centers with 1/m: (2.25 + 0.25 + 0 + 4) / 4
        assert_relative_eq!(law.variance(), 6.5 / 4.0 + 0.09, epsilon = 1e-12);
    }

    #[test]
    fn zero_mean_vector_gives_pure_gaussian() {
        let p = 5;
        let model = DataModel::GaussianLinear(GaussianLinear::isotropic(e(p, 0), 1.0).unwrap());
        let s = sol(DVector::zeros(p), 0.8);
        let law = predict(&model, &s, 100, 0).unwrap();
        assert!(law.centers().iter().all(|&c| c == 0.0));
        let base = gaussian_baseline(&model.moments(), &s).unwrap();
        for t in [-1.0, 0.0, 0.4, 2.0] {
            assert_relative_eq!(law.cdf(t), stats::normal_cdf(t / 0.8), epsilon = 1e-14);
            assert_relative_eq!(base.cdf(t), stats::normal_cdf(t / 0.8), epsilon = 1e-15);
        }
    }

    #[test]
    fn gaussian_design_collapses_to_baseline() {
        let p = 6;
        let cov = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { 0.2 });
        let model = DataModel::GaussianLinear(
            GaussianLinear::new(DVector::from_element(p, 0.1), cov, e(p, 0), 1.0).unwrap(),
        );
        let m = 20_000;
        let s = sol(DVector::from_fn(p, |i, _| 0.3 - 0.1 * i as f64), 0.5);
        let law = predict(&model, &s, m, 1).unwrap();
        let base = gaussian_baseline(&model.moments(), &s).unwrap();
        let d = law_distance(&law, &base, 2001);
        assert!(d <= 5.0 / (m as f64).sqrt(), "{d}");
        assert!((law.mean() - base.mean()).abs() <= 5.0 * base.variance().sqrt() / (m as f64).sqrt());
        assert_relative_eq!(law.variance(), base.variance(), max_relative = 5.0 / (m as f64).sqrt());
    }

    #[test]
    fn bimodal_projection_breaks_the_baseline() {
        let p = 4;
        let base = GaussianLinear::isotropic(e(p, 0), 1.0).unwrap();
        let model = DataModel::BimodalLinear(BimodalLinear::new(base, 1, 3.0, 0.5).unwrap());
        let s = sol(e(p, 1), 0.3);
        let law = predict(&model, &s, 20_000, 2).unwrap();
        let g = gaussian_baseline(&model.moments(), &s).unwrap();
        assert!(law_distance(&law, &g, 2001) >= 0.05);
    }

    #[test]
    fn self_samples_have_small_ks() {
        let law = ScoreLaw::new(vec![-1.0, 0.5, 2.0], 0.6).unwrap();
        let mut r = rng::stream(5, rng::domain::TEST, 0);
        let m = 10_000;
        let xs: Vec<f64> = (0..m)
            .map(|i| law.centers()[i % 3] + 0.6 * r.sample::<f64, _>(StandardNormal))
            .collect();
        let d = ks_distance(&law, &xs).unwrap();
        assert!(d <= 1.63 / (m as f64).sqrt(), "{d}");
        let constant = vec![-1.0; 50];
        assert!(ks_distance(&ScoreLaw::gaussian(0.0, 1.0).unwrap(), &constant).unwrap() >= 0.5 * stats::normal_cdf(1.0));
        assert!(ks_distance(&law, &[]).is_err());
    }

    #[test]
    fn tabulated_ks_matches_direct() {
        let mut g = rng::stream(5, rng::domain::TEST, 0);
        let centers: Vec<f64> = (0..3000)
            .map(|i| if i % 2 == 0 { -2.0 } else { 2.0 } + 0.3 * g.sample::<f64, _>(StandardNormal))
            .collect();
        let law = ScoreLaw::new(centers, 0.8).unwrap();
        let xs: Vec<f64> = (0..20_000)
            .map(|i| if i % 3 == 0 { -2.0 } else { 2.0 } + g.sample::<f64, _>(StandardNormal))
            .collect();
        let direct = stats::ks_statistic(&xs, |s| law.cdf_many(s));
        let fast = ks_distance(&law, &xs).unwrap();
        assert!((direct - fast).abs() < 1e-5, "{direct} vs {fast}");
        assert!(direct > 0.05);
    }

    #[test]
    fn classification_error_limits() {
        let same = ScoreLaw::new(vec![-0.3, 0.2, 1.0], 0.5).unwrap();
        for t in [-2.0, 0.0, 0.7] {
            assert_relative_eq!(classification_error(&same, &same, (0.5, 0.5), t), 0.5, epsilon = 1e-15);
        }
        let far0 = ScoreLaw::gaussian(-1e3, 1.0).unwrap();
        let far1 = ScoreLaw::gaussian(1e3, 1.0).unwrap();
        assert_eq!(classification_error(&far0, &far1, (0.3, 0.7), 0.0), 0.0);
        let grid = threshold_grid(&[&far0, &far1], 201);
        assert_eq!(grid.len(), 201);
        assert_relative_eq!(grid[0], -1003.0);
    }

    #[test]
    fn confinement_cases() {
        let p = 6;
        let basis = vec![e(p, 0), e(p, 1) + e(p, 2)];
        let a = e(p, 3);
        let inside = e(p, 0) * 2.0 - (e(p, 1) + e(p, 2)) + e(p, 3) * 0.5;
        assert!(confinement_residual(&inside, &basis, &a).unwrap() < 1e-15);
        assert_relative_eq!(confinement_residual(&e(p, 5), &basis, &a).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(confinement_residual(&DVector::zeros(p), &basis, &a).unwrap(), 0.0);
        // a zero shift adds nothing to the span
        let half = e(p, 0) + e(p, 4);
        assert_relative_eq!(
            confinement_residual(&half, &basis, &DVector::zeros(p)).unwrap(),
            0.5f64.sqrt(),
            epsilon = 1e-15
        );
    }
}
