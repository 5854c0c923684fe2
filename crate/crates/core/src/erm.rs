//! Finite-sample ERM: `θ̂ = argmin (1/n) Σ L(y_i, x_iᵀθ) + ρ(θ)` by Newton's
//! method, plus replication studies of `θ̂`.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::DataModel;
use crate::error::check_dim;
use crate::linalg;
use crate::loss::Loss;
use crate::regularizer::Regularizer;
use crate::rng;
use crate::stats;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    /// stop at `‖∇F(θ)‖ ≤ tol · max(1, ‖∇F(0)‖)`
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-9,
            max_iters: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErmFit {
    pub theta_hat: DVector<f64>,
    pub objective_value: f64,
    pub gradient_norm: f64,
    pub newton_iters: usize,
}

fn check_inputs(x: &DMatrix<f64>, y: &[f64], loss: &Loss, reg: &Regularizer) -> Result<()> {
    check_dim(x.ncols(), y.len())?;
    check_dim(x.nrows(), reg.dim())?;
    if y.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    y.iter().try_for_each(|&v| loss.check_label(v))
}

/// `F(θ)` on the training set `(X, Y)` with `X` stored as `p × n`.
pub fn objective(
    x: &DMatrix<f64>,
    y: &[f64],
    loss: &Loss,
    reg: &Regularizer,
    theta: &DVector<f64>,
) -> Result<f64> {
    check_inputs(x, y, loss, reg)?;
    check_dim(x.nrows(), theta.len())?;
    let scores = x.tr_mul(theta);
    Ok(data_term(&scores, y, loss) + reg.value(theta)?)
}

fn data_term(scores: &DVector<f64>, y: &[f64], loss: &Loss) -> f64 {
    let s: f64 = scores
        .iter()
        .zip(y)
        .map(|(&u, &v)| loss.value_unchecked(v, u))
        .sum();
    s / y.len() as f64
}

fn gradient(x: &DMatrix<f64>, scores: &DVector<f64>, y: &[f64], loss: &Loss, reg: &Regularizer, theta: &DVector<f64>) -> Result<DVector<f64>> {
    let n = y.len() as f64;
    let d = DVector::from_iterator(y.len(), scores.iter().zip(y).map(|(&u, &v)| loss.deriv_unchecked(v, u) / n));
    Ok(x * d + reg.grad(theta)?)
}

pub fn fit(
    x: &DMatrix<f64>,
    y: &[f64],
    loss: &Loss,
    reg: &Regularizer,
    opts: &FitOptions,
) -> Result<ErmFit> {
    check_inputs(x, y, loss, reg)?;
    let (p, n) = x.shape();
    let mut theta = DVector::zeros(p);
    let mut scores = DVector::zeros(n);
    let mut value = data_term(&scores, y, loss) + reg.value(&theta)?;
    let mut grad = gradient(x, &scores, y, loss, reg, &theta)?;
    let target = opts.tol * grad.norm().max(1.0);
    let mut iters = 0;
    while grad.norm() > target && iters < opts.max_iters {
        let weights: Vec<f64> = scores
            .iter()
            .zip(y)
            .map(|(&u, &v)| loss.second_unchecked(v, u) / n as f64)
            .collect();
        let mut scaled = x.clone();
        for (mut col, w) in scaled.column_iter_mut().zip(&weights) {
            col *= *w;
        }
        let hess = linalg::symmetrize(&(&scaled * x.transpose() + reg.hess(&theta)?));
        let dir = -linalg::cholesky(&hess, "objective hessian")?.solve(&grad);
        let slope = grad.dot(&dir);
        let dir_scores = x.tr_mul(&dir);
        let mut t = 1.0;
        // below this decrement the objective cannot resolve a decrease, but
        // the full Newton step is already in its quadratic regime
        let tiny = -slope <= 1e-12 * (1.0 + value.abs());
        let accepted = loop {
            let cand = &theta + &dir * t;
            let cand_scores = &scores + &dir_scores * t;
            let v = data_term(&cand_scores, y, loss) + reg.value(&cand)?;
            if tiny || v <= value + 1e-4 * t * slope {
                break Some((cand, cand_scores, v));
            }
            t *= 0.5;
            if t < 1e-12 {
                break None;
            }
        };
        iters += 1;
        // no decrease at machine precision: we are at the minimum
        let Some((cand, cand_scores, v)) = accepted else { break };
        theta = cand;
        scores = cand_scores;
        value = v;
        grad = gradient(x, &scores, y, loss, reg, &theta)?;
    }
    Ok(ErmFit {
        objective_value: value,
        gradient_norm: grad.norm(),
        theta_hat: theta,
        newton_iters: iters,
    })
}

/// Shape diagnostics of `uᵀθ̂` across replications, for a fixed random
/// unit direction `u`. Informative only.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalityReport {
    pub direction: DVector<f64>,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// KS distance of the standardised projections to `N(0, 1)`
    pub ks: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationSummary {
    pub r: usize,
    pub mu_hat: DVector<f64>,
    /// per-coordinate standard error of `mu_hat`
    pub mu_hat_stderr: DVector<f64>,
    /// `tr(C_x Ĉ)` with `Ĉ` the unbiased covariance of the `θ̂_r`
    pub trace_cov: f64,
    pub trace_cov_stderr: f64,
    pub normality: NormalityReport,
    pub thetas: Vec<DVector<f64>>,
}

/// `R` independent training sets of size `n`, each fitted. Sub-seeds come
/// from `master_seed` and the replication index only.
pub fn replicate(
    model: &DataModel,
    loss: &Loss,
    reg: &Regularizer,
    n: usize,
    r: usize,
    master_seed: u64,
) -> Result<ReplicationSummary> {
    if r < 2 {
        return Err(Error::InvalidArgument("replication needs R >= 2".into()));
    }
    check_dim(model.dim(), reg.dim())?;
    let opts = FitOptions::default();
    let thetas = (0..r)
        .into_par_iter()
        .map(|i| {
            let seed = rng::derive(master_seed, rng::domain::REPLICATE, i as u64);
            let wrap = |e| Error::Replication {
                index: i,
                source: Box::new(e),
            };
            let s = model.sample(n, seed).map_err(wrap)?;
            let y: Vec<f64> = s.y.iter().copied().collect();
            fit(&s.x, &y, loss, reg, &opts).map(|f| f.theta_hat).map_err(wrap)
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(thetas, &model.moments().cov, master_seed)
}

pub(crate) fn summarize(
    thetas: Vec<DVector<f64>>,
    cov: &DMatrix<f64>,
    seed: u64,
) -> Result<ReplicationSummary> {
    let r = thetas.len();
    let p = cov.nrows();
    let rf = r as f64;
    let mut mean = DVector::zeros(p);
    for t in &thetas {
        mean += t;
    }
    mean /= rf;
    let devs: Vec<DVector<f64>> = thetas.iter().map(|t| t - &mean).collect();
    let mut sq = DVector::zeros(p);
    for d in &devs {
        sq += d.component_mul(d);
    }
    let mu_hat_stderr = (sq / ((rf - 1.0) * rf)).map(f64::sqrt);
    let quad: Vec<f64> = devs.iter().map(|d| d.dot(&(cov * d))).collect();
    let trace_cov = quad.iter().sum::<f64>() / (rf - 1.0);
    let trace_cov_stderr = stats::variance(&quad).sqrt() * rf.sqrt() / (rf - 1.0);

    let mut g = rng::stream(seed, rng::domain::VECTOR, 0);
    let mut u = DVector::from_fn(p, |_, _| g.sample::<f64, _>(StandardNormal));
    let norm = u.norm();
    if norm > 0.0 {
        u /= norm;
    }
    let proj: Vec<f64> = thetas.iter().map(|t| t.dot(&u)).collect();
    let normality = shape_report(u, &proj);
    Ok(ReplicationSummary {
        r,
        mu_hat: mean,
        mu_hat_stderr,
        trace_cov,
        trace_cov_stderr,
        normality,
        thetas,
    })
}

fn shape_report(direction: DVector<f64>, proj: &[f64]) -> NormalityReport {
    let m = stats::mean(proj);
    let n = proj.len() as f64;
    let m2 = proj.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m3 = proj.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    let m4 = proj.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    if m2 == 0.0 {
        return NormalityReport {
            direction,
            skewness: 0.0,
            excess_kurtosis: 0.0,
            ks: 0.0,
        };
    }
    let sd = m2.sqrt();
    let z: Vec<f64> = proj.iter().map(|v| (v - m) / sd).collect();
    let ks = stats::ks_statistic(&z, |t| t.iter().map(|&v| stats::normal_cdf(v)).collect());
    NormalityReport {
        direction,
        skewness: m3 / sd.powi(3),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
        ks,
    }
}

/// What a Lipschitz probe perturbs, and by how much.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Perturbation {
    /// random `ΔX` with this operator norm
    Design(f64),
    /// random `ΔY` with this Euclidean norm (regression only)
    Labels(f64),
}

/// Largest observed `√n ‖Δθ̂‖ / ‖Δ‖` over `m` random perturbations of one
/// training set, with `‖Δ‖` the operator norm of `ΔX` or the norm of `ΔY`.
/// A zero perturbation contributes 0.
pub fn lipschitz_probe(
    model: &DataModel,
    loss: &Loss,
    reg: &Regularizer,
    n: usize,
    seed: u64,
    m: usize,
    perturbation: Perturbation,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one perturbation".into()));
    }
    let size = match perturbation {
        Perturbation::Design(s) | Perturbation::Labels(s) => s,
    };
    if !(size >= 0.0 && size.is_finite()) {
        return Err(Error::InvalidArgument("perturbation size must be finite and >= 0".into()));
    }
    if matches!(perturbation, Perturbation::Labels(_)) && model.regression_target().is_none() {
        return Err(Error::InvalidArgument("label perturbations need a regression design".into()));
    }
    let s = model.sample(n, seed)?;
    let y: Vec<f64> = s.y.iter().copied().collect();
    let opts = FitOptions::default();
    let base = fit(&s.x, &y, loss, reg, &opts)?.theta_hat;
    let mut worst = 0.0f64;
    for i in 0..m {
        if size == 0.0 {
            continue;
        }
        let mut g = rng::stream(seed, rng::domain::PERTURB, i as u64);
        let (x2, y2, norm) = match perturbation {
            Perturbation::Design(_) => {
                let d = crate::data::normal_matrix(&mut g, s.x.nrows(), s.x.ncols());
                let d = &d * (size / linalg::op_norm(&d));
                (&s.x + &d, y.clone(), size)
            }
            Perturbation::Labels(_) => {
                let d = DVector::<f64>::from_fn(n, |_, _| g.sample(StandardNormal));
                let d = &d * (size / d.norm());
                let y2 = y.iter().zip(d.iter()).map(|(a, b)| a + b).collect();
                (s.x.clone(), y2, size)
            }
        };
        let moved = fit(&x2, &y2, loss, reg, &opts)?.theta_hat;
        worst = worst.max((n as f64).sqrt() * (&moved - &base).norm() / norm);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::data::{GaussianLinear, MixtureClasses};

    fn e(p: usize, k: usize) -> DVector<f64> {
        let mut v = DVector::zeros(p);
        v[k] = 1.0;
        v
    }

    /// Normal equations for `ρ = aᵀθ + ½θᵀHθ`.
    fn ridge_oracle(x: &DMatrix<f64>, y: &[f64], a: &DVector<f64>, h: &DMatrix<f64>) -> DVector<f64> {
        let n = y.len() as f64;
        let yv = DVector::from_column_slice(y);
        let lhs = x * x.transpose() / n + h;
        let rhs = x * yv / n - a;
        lhs.lu().solve(&rhs).unwrap()
    }

    #[test]
    fn squared_loss_matches_normal_equations() {
        let p = 25;
        let model = DataModel::GaussianLinear(GaussianLinear::isotropic(e(p, 0) + e(p, 3), 0.7).unwrap());
        let s = model.sample(60, 4).unwrap();
        let y: Vec<f64> = s.y.iter().copied().collect();
        let reg = Regularizer::shifted_ridge(DVector::from_element(p, 0.05), 0.2).unwrap();
        let (a, h) = reg.quadratic_parts().unwrap();
        let f = fit(&s.x, &y, &Loss::SQUARED, &reg, &FitOptions::default()).unwrap();
        let oracle = ridge_oracle(&s.x, &y, &a, &h);
        assert!((&f.theta_hat - &oracle).amax() <= 1e-8);
        assert!(f.newton_iters <= 2);
    }

    #[test]
    fn zero_design_gives_argmin_of_regularizer() {
        let x = DMatrix::zeros(5, 10);
        let y = vec![0.3; 10];
        let f = fit(&x, &y, &Loss::SQUARED, &Regularizer::ridge(1.0, 5).unwrap(), &FitOptions::default()).unwrap();
        assert_eq!(f.theta_hat, DVector::zeros(5));
        let shift = DVector::from_vec(vec![1.0, -2.0, 0.0, 0.5, 0.0]);
        let reg = Regularizer::shifted_ridge(shift.clone(), 0.5).unwrap();
        let f = fit(&x, &y, &Loss::SQUARED, &reg, &FitOptions::default()).unwrap();
        assert_relative_eq!(f.theta_hat, -shift, epsilon = 1e-12);
    }

    #[test]
    fn logistic_on_separable_data_converges() {
        // two points, perfectly separable: only the ridge term keeps θ̂ finite
        let x = DMatrix::from_column_slice(2, 4, &[1.0, 0.2, 2.0, -0.1, -1.0, 0.3, -1.5, 0.0]);
        let y = vec![1.0, 1.0, -1.0, -1.0];
        let reg = Regularizer::ridge(1e-3, 2).unwrap();
        let f = fit(&x, &y, &Loss::LOGISTIC, &reg, &FitOptions::default()).unwrap();
        let g0 = gradient(&x, &DVector::zeros(4), &y, &Loss::LOGISTIC, &reg, &DVector::zeros(2)).unwrap();
        assert!(f.gradient_norm <= 1e-9 * g0.norm().max(1.0));
        assert!(f.theta_hat[0] > 1.0);
    }

    #[test]
    fn smooth_regularizer_fit_is_a_local_minimum() {
        let p = 15;
        let model = DataModel::MixtureClasses(MixtureClasses::symmetric_binary(e(p, 0), DMatrix::identity(p, p), 0.4).unwrap());
        let s = model.sample(80, 2).unwrap();
        let y: Vec<f64> = s.y.iter().copied().collect();
        let reg = Regularizer::smooth_separable(DVector::from_element(p, 0.1), 0.05, 0.3).unwrap();
        let f = fit(&s.x, &y, &Loss::LOGISTIC, &reg, &FitOptions::default()).unwrap();
        let mut g = rng::stream(1, rng::domain::TEST, 0);
        for _ in 0..20 {
            let d = DVector::from_fn(p, |_, _| g.sample::<f64, _>(StandardNormal));
            let d = &d * (1e-3 / d.norm());
            let v = objective(&s.x, &y, &Loss::LOGISTIC, &reg, &(&f.theta_hat + d)).unwrap();
            assert!(v >= f.objective_value);
        }
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let x = DMatrix::zeros(3, 4);
        let reg = Regularizer::ridge(1.0, 3).unwrap();
        let o = FitOptions::default();
        assert!(fit(&x, &[1.0; 3], &Loss::SQUARED, &reg, &o).is_err());
        assert!(fit(&x, &[0.5; 4], &Loss::LOGISTIC, &reg, &o).is_err());
        assert!(fit(&x, &[1.0; 4], &Loss::SQUARED, &Regularizer::ridge(1.0, 2).unwrap(), &o).is_err());
    }

    #[test]
    fn degenerate_problem_replicates_to_zero() {
        let p = 10;
        let model = DataModel::GaussianLinear(GaussianLinear::isotropic(DVector::zeros(p), 0.0).unwrap());
        let s = replicate(&model, &Loss::SQUARED, &Regularizer::ridge(0.5, p).unwrap(), 30, 20, 3).unwrap();
        assert_eq!(s.mu_hat, DVector::zeros(p));
        assert_eq!(s.trace_cov, 0.0);
        assert_eq!(s.r, 20);
    }

    #[test]
    fn replication_is_deterministic_and_validated() {
        let p = 8;
        let model = DataModel::GaussianLinear(GaussianLinear::isotropic(e(p, 1), 1.0).unwrap());
        let reg = Regularizer::ridge(0.3, p).unwrap();
        let a = replicate(&model, &Loss::SQUARED, &reg, 40, 6, 9).unwrap();
        let b = replicate(&model, &Loss::SQUARED, &reg, 40, 6, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.trace_cov > 0.0 && a.trace_cov_stderr > 0.0);
        assert!(replicate(&model, &Loss::SQUARED, &reg, 40, 1, 9).is_err());
        let bad = replicate(&model, &Loss::LOGISTIC, &reg, 40, 3, 9).unwrap_err();
        assert!(matches!(bad, Error::Replication { index: 0, .. }));
    }

    #[test]
    fn mu_hat_is_unbiased_within_stderr() {
        let p = 6;
        let theta = e(p, 0) * 0.8 - e(p, 2) * 0.4;
        let model = DataModel::GaussianLinear(GaussianLinear::isotropic(theta.clone(), 0.5).unwrap());
        let reg = Regularizer::ridge(0.0001, p).unwrap();
        let s = replicate(&model, &Loss::SQUARED, &reg, 200, 100, 1).unwrap();
        for i in 0..p {
            assert!((s.mu_hat[i] - theta[i]).abs() <= 4.0 * s.mu_hat_stderr[i] + 1e-3);
        }
    }

    #[test]
    fn stderr_shrinks_with_more_replications() {
        let p = 10;
        let model = DataModel::GaussianLinear(GaussianLinear::isotropic(e(p, 0), 1.0).unwrap());
        let reg = Regularizer::ridge(0.2, p).unwrap();
        let mut ratios = Vec::new();
        for seed in 0..4 {
            let a = replicate(&model, &Loss::SQUARED, &reg, 40, 100, seed).unwrap();
            let b = replicate(&model, &Loss::SQUARED, &reg, 40, 200, seed + 100).unwrap();
            ratios.push(b.mu_hat_stderr.norm() / a.mu_hat_stderr.norm());
        }
        let r = stats::mean(&ratios);
        assert!((0.6..=0.85).contains(&r), "{ratios:?}");
    }

    #[test]
    fn projection_variance_scales_as_one_over_n() {
        let p = 20;
        let model = DataModel::GaussianLinear(GaussianLinear::isotropic(e(p, 0), 1.0).unwrap());
        let reg = Regularizer::ridge(0.25, p).unwrap();
        let u = DVector::from_element(p, 1.0 / (p as f64).sqrt());
        let var = |n| {
            let s = replicate(&model, &Loss::SQUARED, &reg, n, 200, n as u64).unwrap();
            let proj: Vec<f64> = s.thetas.iter().map(|t| t.dot(&u)).collect();
            (stats::variance(&proj), s)
        };
        let (v1, s1) = var(200);
        let (v2, s2) = var(400);
        let ratio = v1 / v2;
        assert!((1.5..=2.7).contains(&ratio), "{ratio}");
        // ‖Ĉ‖ ≤ c/n with c stable
        let op = |s: &ReplicationSummary, n: f64| {
            let mut c = DMatrix::zeros(p, p);
            for t in &s.thetas {
                let d = t - &s.mu_hat;
                c += &d * d.transpose();
            }
            linalg::op_norm(&(c / (s.r as f64 - 1.0))) * n
        };
        let (c1, c2) = (op(&s1, 200.0), op(&s2, 400.0));
        assert!(c1 / c2 < 2.0 && c2 / c1 < 2.0, "{c1} {c2}");
    }

    #[test]
    fn lipschitz_ratio_is_stable_in_n() {
        let p_of = |n: usize| n / 4;
        let mut ratios = Vec::new();
        for n in [200, 400, 800] {
            let p = p_of(n);
            let model = DataModel::GaussianLinear(GaussianLinear::isotropic(e(p, 0), 0.5).unwrap());
            let reg = Regularizer::ridge(0.5, p).unwrap();
            let r = lipschitz_probe(&model, &Loss::SQUARED, &reg, n, 2, 3, Perturbation::Design(1e-4)).unwrap();
            ratios.push(r);
        }
        let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(lo > 0.0 && hi / lo <= 2.0, "{ratios:?}");
    }

    #[test]
    fn label_perturbation_is_lipschitz() {
        let p = 50;
        let n = 200;
        let model = DataModel::GaussianLinear(GaussianLinear::isotropic(e(p, 0), 0.5).unwrap());
        let reg = Regularizer::ridge(0.5, p).unwrap();
        let l = lipschitz_probe(&model, &Loss::SQUARED, &reg, n, 2, 4, Perturbation::Labels(1e-3)).unwrap();
        // √n ‖Δθ̂‖/‖ΔY‖ ≤ ‖X/√n‖_op / (strong convexity), here ≈ 1.5 / 1
        assert!(l > 0.0 && l <= 2.0, "{l}");
        assert_eq!(lipschitz_probe(&model, &Loss::SQUARED, &reg, n, 2, 4, Perturbation::Design(0.0)).unwrap(), 0.0);
        let cls = DataModel::MixtureClasses(MixtureClasses::symmetric_binary(e(p, 0), DMatrix::identity(p, p), 0.5).unwrap());
        assert!(lipschitz_probe(&cls, &Loss::LOGISTIC, &reg, n, 2, 1, Perturbation::Labels(1.0)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn logistic_fits_satisfy_the_gradient_contract(seed in 0u64..1000, lambda in 1e-3f64..1.0) {
            let p = 8;
            let model = DataModel::MixtureClasses(MixtureClasses::symmetric_binary(e(p, 0) * 2.0, DMatrix::identity(p, p), 0.5).unwrap());
            let s = model.sample(30, seed).unwrap();
            let y: Vec<f64> = s.y.iter().copied().collect();
            let reg = Regularizer::ridge(lambda, p).unwrap();
            let f = fit(&s.x, &y, &Loss::LOGISTIC, &reg, &FitOptions::default()).unwrap();
            let g0 = gradient(&s.x, &DVector::zeros(30), &y, &Loss::LOGISTIC, &reg, &DVector::zeros(p)).unwrap();
            prop_assert!(f.gradient_norm <= 1e-9 * g0.norm().max(1.0));
        }
    }
}
