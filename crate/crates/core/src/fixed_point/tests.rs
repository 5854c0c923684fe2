use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::*;
use crate::data::{ClassSpec, GaussianLinear, MixtureClasses, Moments};
use crate::rng;

fn e(p: usize, k: usize) -> DVector<f64> {
    let mut v = DVector::zeros(p);
    v[k] = 1.0;
    v
}

fn golden() -> f64 {
    (5f64.sqrt() - 1.0) / 2.0
}

fn panel(model: &DataModel, size: usize, seed: u64) -> ExpectationPanel {
    let opts = PanelOptions {
        size,
        seed,
        ..PanelOptions::default()
    };
    ExpectationPanel::build(model, &opts).unwrap()
}

fn logistic_mixture(p: usize) -> DataModel {
    let m = e(p, 0) * 1.5 + e(p, 1) * 0.5;
    DataModel::MixtureClasses(MixtureClasses::symmetric_binary(m, DMatrix::identity(p, p), 0.3).unwrap())
}

#[test]
fn closed_form_golden_scalar_case() {
    let p = 40;
    let theta = e(p, 0);
    let moments = Moments {
        mean: DVector::zeros(p),
        cov: DMatrix::identity(p, p),
    };
    let h = DMatrix::identity(p, p);
    let cf = ridge_closed_form(&moments, &theta, 1.0, &DVector::zeros(p), &h, p).unwrap();
    // by hand: ν² + ν − 1 = 0, A = Δ = 1/(1+ν)², μ = ν/(1+ν) θ*
    let nu = golden();
    let a = 1.0 / (1.0 + nu).powi(2);
    let s = nu * nu * a;
    assert_relative_eq!(cf.nu_star, nu, epsilon = 1e-12);
    assert_relative_eq!(cf.a_star, 0.381966011250105, epsilon = 1e-12);
    assert_relative_eq!(cf.delta, a, epsilon = 1e-12);
    assert_relative_eq!(cf.gen_error, (s + a) / (1.0 - s), epsilon = 1e-12);
    assert_relative_eq!(cf.gen_error, 0.6180339887, epsilon = 1e-9);
    assert_relative_eq!(cf.alpha_sq, s * (a + 1.0) / (1.0 - s), epsilon = 1e-12);
    assert_relative_eq!(cf.mu_of_nu[0], nu / (1.0 + nu), epsilon = 1e-12);
}

#[test]
fn closed_form_trivial_limits() {
    let p = 30;
    let moments = Moments {
        mean: DVector::from_element(p, 0.2),
        cov: DMatrix::identity(p, p) * 0.7,
    };
    let zero = DVector::zeros(p);
    let cf = ridge_closed_form(&moments, &zero, 0.0, &zero, &DMatrix::identity(p, p), 60).unwrap();
    assert_eq!(cf.gen_error, 0.0);
    assert_eq!(cf.alpha_sq, 0.0);

    // heavy shrinkage: μ → 0 and the risk tends to the null predictor's
    let theta = DVector::from_fn(p, |i, _| if i % 2 == 0 { 0.3 } else { -0.1 });
    let h = DMatrix::identity(p, p) * 1e9;
    let cf = ridge_closed_form(&moments, &theta, 1.0, &zero, &h, 60).unwrap();
    let null = theta.dot(&(moments.second_moment() * &theta));
    assert!(cf.mu_of_nu.norm() < 1e-8);
    assert_relative_eq!(cf.gen_error, null, max_relative = 1e-6);
}

#[test]
fn closed_form_rejects_bad_inputs() {
    let p = 5;
    let m = Moments {
        mean: DVector::zeros(p),
        cov: DMatrix::identity(p, p),
    };
    let z = DVector::zeros(p);
    let h = DMatrix::identity(p, p);
    assert!(ridge_closed_form(&m, &DVector::zeros(4), 0.0, &z, &h, 5).is_err());
    assert!(ridge_closed_form(&m, &z, -1.0, &z, &h, 5).is_err());
    assert!(ridge_closed_form(&m, &z, 0.0, &z, &(-h), 5).is_err());
}

#[test]
fn squared_loss_matches_closed_form() {
    let p = 60;
    let n = 120;
    let theta = DVector::from_fn(p, |i, _| ((i * 7 % 11) as f64 - 5.0) / 10.0);
    let cov = DMatrix::from_fn(p, p, |i, j| 0.4f64.powi((i as i32 - j as i32).abs()));
    let base = GaussianLinear::new(DVector::zeros(p), cov, theta.clone(), 0.8).unwrap();
    let model = DataModel::GaussianLinear(base);
    let shift = DVector::from_fn(p, |i, _| 0.05 * (i % 3) as f64);
    let reg = Regularizer::shifted_ridge(shift.clone(), 0.3).unwrap();
    let (a, h) = reg.quadratic_parts().unwrap();
    let cf = ridge_closed_form(&model.moments(), &theta, 0.8, &a, &h, n).unwrap();
    let sol = solve(&model, &Loss::SQUARED, &reg, n, &panel(&model, 4000, 3), &SolveOptions::default()).unwrap();
    assert!(sol.converged, "{sol:?}");
    assert_relative_eq!(sol.nu_star, cf.nu_star, max_relative = 1e-3);
    assert_relative_eq!(sol.alpha_star.powi(2), cf.alpha_sq, max_relative = 1e-3);
    assert!((&sol.mu_star - &cf.mu_of_nu).norm() <= 1e-3 * cf.mu_of_nu.norm());
    assert_relative_eq!(sol.kappa_star, cf.kappa_star, max_relative = 1e-3);
}

#[test]
fn zero_signal_zero_noise_is_degenerate() {
    let p = 20;
    let model = DataModel::GaussianLinear(GaussianLinear::isotropic(DVector::zeros(p), 0.0).unwrap());
    let reg = Regularizer::ridge(0.5, p).unwrap();
    let sol = solve(&model, &Loss::SQUARED, &reg, 40, &panel(&model, 1000, 1), &SolveOptions::default()).unwrap();
    assert!(sol.converged, "{sol:?}");
    assert!(sol.degenerate);
    assert_eq!(sol.alpha_star, 0.0);
    assert_eq!(sol.mu_star.norm(), 0.0);
    assert_eq!(sol.beta_star, 0.0);
}

#[test]
fn analytic_state_has_tiny_residuals() {
    let p = 50;
    let theta = e(p, 0);
    let model = DataModel::GaussianLinear(GaussianLinear::isotropic(theta.clone(), 1.0).unwrap());
    let reg = Regularizer::quadratic(DVector::zeros(p), DMatrix::identity(p, p)).unwrap();
    let pan = panel(&model, 2000, 5);
    let nu = golden();
    let a = 1.0 / (1.0 + nu).powi(2);
    let s = nu * nu * a;
    let state = FixedPointState {
        mu: &theta * (nu / (1.0 + nu)),
        alpha: (s * (a + 1.0) / (1.0 - s)).sqrt(),
        kappa: 1.0 / (1.0 + nu),
        nu,
    };
    let r = residuals(&state, &model, &Loss::SQUARED, &reg, p, &pan).unwrap();
    assert!(r.iter().all(|&v| v <= 1e-10), "{r:?}");

    let mut doubled = state.clone();
    doubled.kappa *= 2.0;
    let r = residuals(&doubled, &model, &Loss::SQUARED, &reg, p, &pan).unwrap();
    assert!(r[0] > 1e-8);
    assert!(residuals(&FixedPointState { kappa: 0.0, ..state }, &model, &Loss::SQUARED, &reg, p, &pan).is_err());
}

#[test]
fn logistic_plug_back() {
    let p = 30;
    let model = logistic_mixture(p);
    let reg = Regularizer::ridge(0.05, p).unwrap();
    let pan = panel(&model, 6000, 2);
    let sol = solve(&model, &Loss::LOGISTIC, &reg, 90, &pan, &SolveOptions::default()).unwrap();
    assert!(sol.converged, "{sol:?}");
    assert!(!sol.degenerate);
    let r = residuals(&sol.state(), &model, &Loss::LOGISTIC, &reg, 90, &pan).unwrap();
    assert!(r.iter().all(|&v| v <= 1e-8), "{r:?}");
    assert_eq!(r, sol.residuals);
    assert!(sol.alpha_star > 0.0 && sol.kappa_star > 0.0 && sol.nu_star > 0.0);
}

#[test]
fn rejects_mismatched_inputs() {
    let p = 10;
    let model = logistic_mixture(p);
    let pan = panel(&model, 200, 0);
    let opts = SolveOptions::default();
    let ridge = Regularizer::ridge(0.1, p).unwrap();
    assert!(solve(&model, &Loss::LOGISTIC, &Regularizer::ridge(0.1, p + 1).unwrap(), 20, &pan, &opts).is_err());
    assert!(solve(&model, &Loss::LOGISTIC, &ridge, 0, &pan, &opts).is_err());
    let smooth = Regularizer::smooth_separable(DVector::zeros(p), 0.1, 0.1).unwrap();
    assert!(solve(&model, &Loss::LOGISTIC, &smooth, 20, &pan, &opts).is_err());
    let reg_model = DataModel::GaussianLinear(GaussianLinear::isotropic(e(p, 0), 1.0).unwrap());
    let reg_panel = panel(&reg_model, 200, 0);
    assert!(solve(&reg_model, &Loss::LOGISTIC, &ridge, 20, &reg_panel, &opts).is_err());
    assert!(solve_multiclass(&reg_model, &Loss::SQUARED, &ridge, 20, &reg_panel, &opts).is_err());
}

#[test]
fn independent_panels_agree() {
    let p = 30;
    let m = 20_000;
    let model = logistic_mixture(p);
    let reg = Regularizer::ridge(0.05, p).unwrap();
    let opts = SolveOptions::default();
    let a = solve(&model, &Loss::LOGISTIC, &reg, 90, &panel(&model, m, 10), &opts).unwrap();
    let b = solve(&model, &Loss::LOGISTIC, &reg, 90, &panel(&model, m, 11), &opts).unwrap();
    let (x, y) = (a.alpha_star.powi(2), b.alpha_star.powi(2));
    assert!((x - y).abs() / x.max(y) <= 5.0 / (m as f64).sqrt(), "{x} vs {y}");
}

#[test]
fn same_seed_is_bit_stable() {
    let p = 12;
    let model = logistic_mixture(p);
    let reg = Regularizer::ridge(0.1, p).unwrap();
    let opts = SolveOptions::default();
    let a = solve(&model, &Loss::LOGISTIC, &reg, 30, &panel(&model, 3000, 4), &opts).unwrap();
    let b = solve(&model, &Loss::LOGISTIC, &reg, 30, &panel(&model, 3000, 4), &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn quadrature_and_monte_carlo_agree_on_z_xi() {
    let loss = Loss::LOGISTIC;
    let gh = crate::quadrature::GaussHermite::new(41).unwrap();
    let mut r = rng::stream(9, rng::domain::TEST, 0);
    for &(c, alpha, kappa) in &[(0.3, 0.8, 0.5), (-1.2, 1.5, 2.0), (2.0, 0.4, 0.1)] {
        let quad = gh.expect(|z| z * loss.xi(1.0, c + alpha * z, kappa).unwrap());
        let draws = 400_000;
        let slope = loss.xi_du(1.0, c, kappa).unwrap();
        let mut mc = 0.0;
        for _ in 0..draws {
            let z: f64 = r.sample(StandardNormal);
            let pair = loss.xi(1.0, c + alpha * z, kappa).unwrap() - loss.xi(1.0, c - alpha * z, kappa).unwrap();
            // antithetic pair plus the z² control variate from the linearisation
            mc += 0.5 * z * pair - alpha * slope * (z * z - 1.0);
        }
        mc /= draws as f64;
        assert_relative_eq!(quad, mc, max_relative = 1e-3);
    }
}

#[test]
fn surrogate_refit_stabilises() {
    let p = 20;
    let model = logistic_mixture(p);
    let shift = DVector::from_fn(p, |i, _| 0.02 * i as f64 - 0.1);
    let reg = Regularizer::smooth_separable(shift, 0.2, 0.05).unwrap();
    let out = solve_with_refit(
        &model,
        &Loss::LOGISTIC,
        &reg,
        60,
        &panel(&model, 4000, 6),
        &SolveOptions::default(),
        5,
        1e-6,
    )
    .unwrap();
    assert!(out.stable, "{:?}", out.steps);
    assert!(out.steps.len() <= 5);
    assert!(*out.steps.last().unwrap() <= 1e-6);
    assert!(out.solution.converged);
}

#[test]
fn single_class_multiclass_reduces_to_solve() {
    let p = 15;
    let model = DataModel::MixtureClasses(
        MixtureClasses::new(vec![ClassSpec {
            prior: 1.0,
            label: 1.0,
            mean: e(p, 2) * 0.7,
            cov: DMatrix::identity(p, p) * 0.9,
            tags: vec![],
        }])
        .unwrap(),
    );
    let reg = Regularizer::ridge(0.2, p).unwrap();
    let pan = panel(&model, 3000, 8);
    let opts = SolveOptions::default();
    let single = solve(&model, &Loss::LOGISTIC, &reg, 40, &pan, &opts).unwrap();
    let multi = solve_multiclass(&model, &Loss::LOGISTIC, &reg, 40, &pan, &opts).unwrap();
    assert!(single.converged && multi.converged);
    assert_relative_eq!(single.alpha_star, multi.alpha[0], max_relative = 1e-8);
    assert_relative_eq!(single.kappa_star, multi.kappa[0], max_relative = 1e-8);
    assert_relative_eq!(single.nu_star, multi.nu[0], max_relative = 1e-8);
    assert!((&single.mu_star - &multi.mu_star).norm() <= 1e-8 * single.mu_star.norm());
}

#[test]
fn symmetric_two_class_system_is_symmetric() {
    let p = 16;
    let m = e(p, 0) * 1.2;
    let model = DataModel::MixtureClasses(MixtureClasses::symmetric_binary(m.clone(), DMatrix::identity(p, p), 0.5).unwrap());
    // mirror the positive class exactly so the panel keeps the symmetry
    let mut r = rng::stream(2, rng::domain::TEST, 1);
    let half = 1500;
    let mut x = DMatrix::zeros(p, 2 * half);
    let mut y = vec![0.0; 2 * half];
    for j in 0..half {
        let g = DVector::from_fn(p, |_, _| r.sample::<f64, _>(StandardNormal)) + &m;
        x.set_column(j, &g);
        x.set_column(half + j, &(-g));
        y[j] = 1.0;
        y[half + j] = -1.0;
    }
    let pan = ExpectationPanel::from_samples(x, y, 41).unwrap();
    let reg = Regularizer::ridge(0.1, p).unwrap();
    let sol = solve_multiclass(&model, &Loss::LOGISTIC, &reg, 48, &pan, &SolveOptions::default()).unwrap();
    assert!(sol.converged, "{sol:?}");
    assert!(sol.residuals.iter().all(|&v| v <= 1e-8));
    assert_relative_eq!(sol.kappa[0], sol.kappa[1], max_relative = 1e-10);
    assert_relative_eq!(sol.nu[0], sol.nu[1], max_relative = 1e-8);
    assert_relative_eq!(sol.alpha[0], sol.alpha[1], max_relative = 1e-8);
}

#[test]
fn generic_two_class_plug_back() {
    let p = 12;
    let model = DataModel::MixtureClasses(
        MixtureClasses::new(vec![
            ClassSpec {
                prior: 0.35,
                label: -1.0,
                mean: e(p, 0) * -0.5,
                cov: DMatrix::identity(p, p) * 0.5,
                tags: vec![],
            },
            ClassSpec {
                prior: 0.65,
                label: 1.0,
                mean: e(p, 0) + e(p, 1) * 0.5,
                cov: DMatrix::from_fn(p, p, |i, j| 0.3f64.powi((i as i32 - j as i32).abs())),
                tags: vec![],
            },
        ])
        .unwrap(),
    );
    let reg = Regularizer::shifted_ridge(e(p, 3) * 0.1, 0.1).unwrap();
    let sol = solve_multiclass(&model, &Loss::LOGISTIC, &reg, 30, &panel(&model, 4000, 12), &SolveOptions::default()).unwrap();
    assert!(sol.converged, "{sol:?}");
    assert!(sol.residuals.iter().all(|&v| v <= 1e-8));
    assert_ne!(sol.kappa[0], sol.kappa[1]);
    assert_eq!(sol.labels, vec![-1.0, 1.0]);
}

#[test]
fn unconverged_solve_reports_diagnostics() {
    let p = 10;
    let model = logistic_mixture(p);
    let reg = Regularizer::ridge(0.1, p).unwrap();
    let opts = SolveOptions {
        max_iters: 2,
        ..SolveOptions::default()
    };
    let sol = solve(&model, &Loss::LOGISTIC, &reg, 20, &panel(&model, 500, 0), &opts).unwrap();
    assert!(!sol.converged);
    assert_eq!(sol.iterations, 2);
    assert!(sol.max_residual() > opts.tol);
}

#[test]
fn panel_moments_are_matched_exactly() {
    let p = 8;
    let theta = e(p, 1);
    let cov = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 + i as f64 * 0.1 } else { 0.1 });
    let base = GaussianLinear::new(DVector::from_element(p, 0.3), cov.clone(), theta.clone(), 0.5).unwrap();
    let model = DataModel::GaussianLinear(base);
    let pan = panel(&model, 1000, 0);
    let w = pan.size() as f64;
    let mean = pan.x.column_mean();
    assert!((mean.add_scalar(-0.3)).amax() < 1e-12);
    let mut c = pan.x.clone();
    for mut col in c.column_iter_mut() {
        col -= &mean;
    }
    let emp = &c * c.transpose() / w;
    assert!((emp - cov).amax() < 1e-10);
    // noise has mean zero, variance σ², and no correlation with x
    let eps: Vec<f64> = (0..pan.size()).map(|j| pan.y[j] - pan.x.column(j).dot(&theta)).collect();
    let e_mean: f64 = eps.iter().sum::<f64>() / w;
    let e_var: f64 = eps.iter().map(|v| v * v).sum::<f64>() / w;
    assert!(e_mean.abs() < 1e-12);
    assert_relative_eq!(e_var, 0.25, max_relative = 1e-10);
    let cross = &c * DVector::from_vec(eps) / w;
    assert!(cross.amax() < 1e-12);
    assert!((pan.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn class_panel_is_stratified() {
    let model = logistic_mixture(6);
    let pan = panel(&model, 1000, 0);
    assert_eq!(pan.groups.len(), 2);
    assert_eq!(pan.groups[0].range.len(), 700);
    assert_eq!(pan.groups[1].range.len(), 300);
    for g in &pan.groups {
        let mass: f64 = pan.weights[g.range.clone()].iter().sum();
        assert_relative_eq!(mass, g.prior, max_relative = 1e-12);
        assert!(pan.y[g.range.clone()].iter().all(|&v| Some(v) == g.label));
    }
    let big = PanelOptions {
        size: usize::MAX / 64,
        ..PanelOptions::default()
    };
    assert!(ExpectationPanel::build(&model, &big).is_err());
}
