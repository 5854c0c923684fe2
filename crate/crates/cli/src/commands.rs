//! The four subcommands. Each writes its files into the output directory
//! and reports whether every solve converged.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use erm_asymptotics::data::ClassMoments;
use erm_asymptotics::erm::{self, FitOptions};
use erm_asymptotics::fixed_point::{ridge_closed_form, solve, solve_with_refit, RidgeClosedForm};
use erm_asymptotics::score::{self, ScoreLaw};
use erm_asymptotics::{rng, stats, DataModel, ExpectationPanel, FixedPointSolution, LabelSpace, Loss, Regularizer};
use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{self, Config, ModelSpec, Resolved, SweepParameter};
use crate::CliError;

/// Test points are scored in chunks of this many columns.
const TEST_CHUNK: usize = 20_000;

fn numerical(e: erm_asymptotics::Error) -> CliError {
    CliError::Numerical(e.to_string())
}

#[derive(Serialize)]
struct Residuals {
    kappa: f64,
    nu: f64,
    alpha: f64,
    mu: f64,
}

#[derive(Serialize)]
struct SolutionJson {
    mu_star: Vec<f64>,
    alpha_star: f64,
    kappa_star: f64,
    nu_star: f64,
    beta_star: f64,
    residuals: Residuals,
    max_residual: f64,
    iterations: usize,
    converged: bool,
    degenerate: bool,
}

impl From<&FixedPointSolution> for SolutionJson {
    fn from(s: &FixedPointSolution) -> Self {
        SolutionJson {
            mu_star: s.mu_star.iter().copied().collect(),
            alpha_star: s.alpha_star,
            kappa_star: s.kappa_star,
            nu_star: s.nu_star,
            beta_star: s.beta_star,
            residuals: Residuals {
                kappa: s.residuals[0],
                nu: s.residuals[1],
                alpha: s.residuals[2],
                mu: s.residuals[3],
            },
            max_residual: s.max_residual(),
            iterations: s.iterations,
            converged: s.converged,
            degenerate: s.degenerate,
        }
    }
}

#[derive(Serialize)]
struct ClosedFormJson {
    nu_star: f64,
    kappa_star: f64,
    a_star: f64,
    mu_of_nu: Vec<f64>,
    delta: f64,
    alpha_sq: f64,
    gen_error: f64,
}

impl From<RidgeClosedForm> for ClosedFormJson {
    fn from(c: RidgeClosedForm) -> Self {
        ClosedFormJson {
            nu_star: c.nu_star,
            kappa_star: c.kappa_star,
            a_star: c.a_star,
            mu_of_nu: c.mu_of_nu.iter().copied().collect(),
            delta: c.delta,
            alpha_sq: c.alpha_sq,
            gen_error: c.gen_error,
        }
    }
}

#[derive(Serialize)]
struct RefitJson {
    steps: Vec<f64>,
    stable: bool,
}

#[derive(Serialize)]
struct MultistartJson {
    starts: usize,
    all_converged: bool,
    /// max over starts of `‖μ_i − μ*‖ / ‖μ*‖`
    max_mu_gap: f64,
    /// max over starts of `|α_i − α*|`
    max_alpha_gap: f64,
    max_kappa_gap: f64,
    max_nu_gap: f64,
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    config: &'a Config,
    solution: SolutionJson,
    #[serde(skip_serializing_if = "Option::is_none")]
    refit: Option<RefitJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form: Option<ClosedFormJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    multistart: Option<MultistartJson>,
    /// `‖P_⊥μ*‖/‖μ*‖` outside `F + span(a)` for an LFMM
    #[serde(skip_serializing_if = "Option::is_none")]
    confinement: Option<f64>,
    notes: Vec<String>,
}

struct Theory {
    sol: FixedPointSolution,
    refit: Option<RefitJson>,
}

fn build_panel(cfg: &Config, model: &DataModel, reg: &Regularizer) -> Result<ExpectationPanel, CliError> {
    let preserve = match model {
        DataModel::Lfmm(_) => vec![reg.shift()],
        _ => Vec::new(),
    };
    ExpectationPanel::build(model, &cfg.panel_options(preserve)).map_err(numerical)
}

fn theory(
    cfg: &Config,
    model: &DataModel,
    loss: &Loss,
    reg: &Regularizer,
    panel: &ExpectationPanel,
    initial_mu: Option<DVector<f64>>,
) -> Result<Theory, CliError> {
    let opts = erm_asymptotics::SolveOptions {
        initial_mu,
        ..cfg.solve_options()
    };
    if reg.is_quadratic() {
        let sol = solve(model, loss, reg, cfg.n, panel, &opts).map_err(numerical)?;
        return Ok(Theory { sol, refit: None });
    }
    let out = solve_with_refit(
        model,
        loss,
        reg,
        cfg.n,
        panel,
        &opts,
        cfg.solver.max_refits,
        cfg.solver.refit_tol,
    )
    .map_err(numerical)?;
    Ok(Theory {
        sol: out.solution,
        refit: Some(RefitJson {
            steps: out.steps,
            stable: out.stable,
        }),
    })
}

fn converged(t: &Theory) -> bool {
    t.sol.converged && t.refit.as_ref().is_none_or(|r| r.stable)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    writeln!(w).map_err(io)?;
    w.flush().map_err(io)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn fmt(x: f64) -> String {
    x.to_string()
}

pub fn solve_cmd(cfg: &Config, out: &Path) -> Result<bool, CliError> {
    let Resolved {
        model,
        loss,
        reg,
        directions,
    } = cfg.resolve()?;
    let panel = build_panel(cfg, &model, &reg)?;
    let main = theory(cfg, &model, &loss, &reg, &panel, None)?;
    let mut notes = Vec::new();

    let closed_form = match (model.regression_target(), reg.quadratic_parts(), loss == Loss::SQUARED) {
        (Some((theta, sigma)), Some((a, h)), true) => {
            match ridge_closed_form(&model.moments(), theta, sigma, &a, &h, cfg.n) {
                Ok(c) => Some(c.into()),
                Err(e) => {
                    notes.push(format!("closed form unavailable: {e}"));
                    None
                }
            }
        }
        _ => None,
    };

    let multistart = if cfg.solver.multistart > 0 {
        let p = model.dim();
        let scale = (1.0 + main.sol.mu_star.norm()) / (p as f64).sqrt();
        let starts = (0..cfg.solver.multistart)
            .map(|i| {
                let mut g = rng::stream(cfg.seed, rng::domain::START, i as u64);
                let mu0 = DVector::from_fn(p, |_, _| scale * g.sample::<f64, _>(StandardNormal));
                theory(cfg, &model, &loss, &reg, &panel, Some(mu0))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let norm = main.sol.mu_star.norm().max(f64::MIN_POSITIVE);
        let gap = |f: &dyn Fn(&FixedPointSolution) -> f64| {
            starts.iter().map(|t| f(&t.sol)).fold(0.0, f64::max)
        };
        Some(MultistartJson {
            starts: starts.len(),
            all_converged: starts.iter().all(converged),
            max_mu_gap: gap(&|s| (&s.mu_star - &main.sol.mu_star).norm() / norm),
            max_alpha_gap: gap(&|s| (s.alpha_star - main.sol.alpha_star).abs()),
            max_kappa_gap: gap(&|s| (s.kappa_star - main.sol.kappa_star).abs()),
            max_nu_gap: gap(&|s| (s.nu_star - main.sol.nu_star).abs()),
        })
    } else {
        None
    };

    let confinement = if matches!(cfg.model, ModelSpec::Lfmm { .. }) {
        Some(score::confinement_residual(&main.sol.mu_star, &directions, &reg.shift()).map_err(numerical)?)
    } else {
        None
    };
    if main.sol.degenerate {
        notes.push(format!(
            "alpha fell below alpha_floor = {:e} and was set to zero",
            cfg.solver.alpha_floor
        ));
    }
    let ok = converged(&main);
    write_json(
        &out.join("solution.json"),
        &SolveOutput {
            config: cfg,
            solution: (&main.sol).into(),
            refit: main.refit,
            closed_form,
            multistart,
            confinement,
            notes,
        },
    )?;
    Ok(ok)
}

/// Fraction of `m` fresh draws misclassified by `sign(xᵀθ)`.
fn test_error(model: &DataModel, theta: &DVector<f64>, m: usize, seed: u64) -> Result<f64, CliError> {
    let mut wrong = 0usize;
    for c in 0..m.div_ceil(TEST_CHUNK) {
        let count = TEST_CHUNK.min(m - c * TEST_CHUNK);
        let s = model
            .sample(count, rng::derive(seed, rng::domain::TEST, c as u64))
            .map_err(numerical)?;
        let scores = s.x.tr_mul(theta);
        wrong += scores
            .iter()
            .zip(s.y.iter())
            .filter(|(sc, y)| (**sc > 0.0) != (**y > 0.0))
            .count();
    }
    Ok(wrong as f64 / m as f64)
}

/// `E[(xᵀθ − xᵀθ*)²]`, the excess squared risk of `θ`.
fn excess_risk(model: &DataModel, theta: &DVector<f64>) -> Option<f64> {
    let (theta_star, _) = model.regression_target()?;
    let d = theta - theta_star;
    Some(d.dot(&(model.moments().second_moment() * &d)))
}

/// Error predicted by per-class score laws at threshold zero.
fn law_error(laws: &[(f64, f64, ScoreLaw)]) -> Result<f64, CliError> {
    let find = |label: f64| {
        laws.iter()
            .find(|(l, _, _)| *l == label)
            .ok_or_else(|| CliError::Numerical(format!("no class with label {label}")))
    };
    let (_, g0, neg) = find(-1.0)?;
    let (_, g1, pos) = find(1.0)?;
    Ok(score::classification_error(neg, pos, (*g0, *g1), 0.0))
}

fn class_laws(model: &DataModel, sol: &FixedPointSolution, m: usize, seed: u64) -> Result<Vec<(f64, f64, ScoreLaw)>, CliError> {
    Ok(score::predict_by_class(model, sol, m, seed)
        .map_err(numerical)?
        .into_iter()
        .map(|c| (c.label, c.prior, c.law))
        .collect())
}

fn baseline_laws(classes: &[ClassMoments], sol: &FixedPointSolution) -> Result<Vec<(f64, f64, ScoreLaw)>, CliError> {
    classes
        .iter()
        .map(|c| Ok((c.label, c.prior, score::gaussian_baseline(&c.moments, sol).map_err(numerical)?)))
        .collect()
}

fn classes(model: &DataModel) -> Result<Vec<ClassMoments>, CliError> {
    model
        .classes()
        .ok_or_else(|| CliError::Numerical(format!("{} has no class structure", model.kind_name())))
}

/// Error of the theory: per-class law error for classification, excess
/// risk `Δ + α²` of `μ*` for regression.
fn theory_error(model: &DataModel, sol: &FixedPointSolution, m: usize, seed: u64) -> Result<f64, CliError> {
    match model.label_space() {
        LabelSpace::BinaryPM1 => law_error(&class_laws(model, sol, m, seed)?),
        LabelSpace::Real => excess_risk(model, &sol.mu_star)
            .map(|d| d + sol.alpha_star.powi(2))
            .ok_or_else(|| CliError::Numerical("regression error needs a generative model with θ*".into())),
    }
}

#[derive(Serialize)]
struct CompareRow {
    quantity: &'static str,
    theory: f64,
    empirical: f64,
    stderr: f64,
    relative_gap: f64,
    absolute_gap: f64,
}

impl CompareRow {
    fn new(quantity: &'static str, theory: f64, empirical: f64, stderr: f64) -> Self {
        CompareRow {
            quantity,
            theory,
            empirical,
            stderr,
            relative_gap: (empirical - theory).abs() / theory.abs(),
            absolute_gap: (empirical - theory).abs(),
        }
    }
}

#[derive(Serialize)]
struct CompareOutput<'a> {
    config: &'a Config,
    solution: SolutionJson,
    #[serde(skip_serializing_if = "Option::is_none")]
    refit: Option<RefitJson>,
    replications: usize,
    normality: NormalityJson,
    rows: Vec<CompareRow>,
}

#[derive(Serialize)]
struct NormalityJson {
    skewness: f64,
    excess_kurtosis: f64,
    ks: f64,
}

pub fn compare_cmd(cfg: &Config, out: &Path) -> Result<bool, CliError> {
    let r = cfg.replication.r;
    if r < 2 {
        return Err(CliError::Config(format!("compare needs replication.r >= 2, got {r}")));
    }
    let Resolved { model, loss, reg, .. } = cfg.resolve()?;
    let panel = build_panel(cfg, &model, &reg)?;
    let th = theory(cfg, &model, &loss, &reg, &panel, None)?;
    let sol = &th.sol;
    let rep = erm::replicate(&model, &loss, &reg, cfg.n, r, cfg.seed).map_err(numerical)?;

    let mu = &sol.mu_star;
    let mu_hat = &rep.mu_hat;
    let se = &rep.mu_hat_stderr;
    let (nm, nh) = (mu.norm(), mu_hat.norm());
    // delta method on the coordinatewise standard errors
    let norm_se = (mu_hat.component_mul(se) / nh).norm();
    let cosine = mu.dot(mu_hat) / (nm * nh);
    let cos_grad = (mu / nm - mu_hat * (cosine / nh)) / nh;
    let cos_se = cos_grad.component_mul(se).norm();

    let mut rows = vec![
        CompareRow::new("norm_mu", nm, nh, norm_se),
        CompareRow::new("cosine", 1.0, cosine, cos_se),
        CompareRow::new("alpha_sq", sol.alpha_star.powi(2), rep.trace_cov, rep.trace_cov_stderr),
    ];
    let errs: Option<Vec<f64>> = match model.label_space() {
        LabelSpace::Real => rep.thetas.iter().map(|t| excess_risk(&model, t)).collect(),
        LabelSpace::BinaryPM1 => Some(
            rep.thetas
                .par_iter()
                .map(|t| test_error(&model, t, cfg.replication.test_points, cfg.seed))
                .collect::<Result<Vec<_>, _>>()?,
        ),
    };
    if let Some(errs) = errs {
        let th_err = theory_error(&model, sol, cfg.score.m, rng::derive(cfg.seed, rng::domain::PROJECTION, 0))?;
        rows.push(CompareRow::new("error", th_err, stats::mean(&errs), stats::stderr(&errs)));
    }

    let csv_path = out.join("comparison.csv");
    let mut w = csv_writer(&csv_path)?;
    let err = csv_err(&csv_path);
    w.write_record(["quantity", "theory", "empirical", "stderr", "relative_gap", "absolute_gap"])
        .map_err(&err)?;
    for row in &rows {
        w.write_record([
            row.quantity.to_string(),
            fmt(row.theory),
            fmt(row.empirical),
            fmt(row.stderr),
            fmt(row.relative_gap),
            fmt(row.absolute_gap),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", csv_path.display())))?;

    let ok = converged(&th);
    write_json(
        &out.join("comparison.json"),
        &CompareOutput {
            config: cfg,
            solution: sol.into(),
            refit: th.refit,
            replications: r,
            normality: NormalityJson {
                skewness: rep.normality.skewness,
                excess_kurtosis: rep.normality.excess_kurtosis,
                ks: rep.normality.ks,
            },
            rows,
        },
    )?;
    Ok(ok)
}

#[derive(Serialize)]
struct SweepRow {
    value: f64,
    theory_error: f64,
    gaussian_score_error: f64,
    gaussian_data_error: f64,
    empirical_error: f64,
    empirical_stderr: f64,
    /// sup distance between the predicted score law and its Gaussian baseline
    ks_law_baseline: f64,
    alpha_star: f64,
    converged: bool,
    message: String,
}

#[derive(Serialize)]
struct SweepOutput<'a> {
    config: &'a Config,
    rows: &'a [SweepRow],
}

struct Shared<'a> {
    cfg: &'a Config,
    model: &'a DataModel,
    surrogate: &'a DataModel,
    loss: &'a Loss,
    panel: Option<&'a ExpectationPanel>,
    surrogate_panel: Option<&'a ExpectationPanel>,
}

fn sweep_point(sh: &Shared, reg: &Regularizer, k: usize, row: &mut SweepRow) -> Result<(), CliError> {
    let cfg = sh.cfg;
    let seed = rng::derive(cfg.seed, rng::domain::PROJECTION, k as u64);
    let owned;
    let panel = match sh.panel {
        Some(p) => p,
        None => {
            owned = build_panel(cfg, sh.model, reg)?;
            &owned
        }
    };
    let th = theory(cfg, sh.model, sh.loss, reg, panel, None)?;
    let sol = &th.sol;
    row.alpha_star = sol.alpha_star;
    row.converged = converged(&th);
    row.theory_error = theory_error(sh.model, sol, cfg.score.m, seed)?;
    row.gaussian_score_error = match sh.model.label_space() {
        LabelSpace::BinaryPM1 => law_error(&baseline_laws(&classes(sh.model)?, sol)?)?,
        LabelSpace::Real => row.theory_error,
    };
    let law = score::predict(sh.model, sol, cfg.score.m, seed).map_err(numerical)?;
    let base = score::gaussian_baseline(&sh.model.moments(), sol).map_err(numerical)?;
    row.ks_law_baseline = score::law_distance(&law, &base, cfg.score.grid);

    let owned_s;
    let spanel = match sh.surrogate_panel {
        Some(p) => p,
        None => {
            owned_s = build_panel(cfg, sh.surrogate, reg)?;
            &owned_s
        }
    };
    let gs = theory(cfg, sh.surrogate, sh.loss, reg, spanel, None)?;
    row.converged &= converged(&gs);
    row.gaussian_data_error = theory_error(sh.surrogate, &gs.sol, cfg.score.m, seed)?;

    let sweep = cfg.sweep.as_ref().expect("sweep config checked by caller");
    let errs = (0..sweep.reps)
        .map(|r| {
            let idx = (k * sweep.reps + r) as u64;
            let s = sh
                .model
                .sample(cfg.n, rng::derive(cfg.seed, rng::domain::SAMPLE, idx))
                .map_err(numerical)?;
            let y: Vec<f64> = s.y.iter().copied().collect();
            let fit = erm::fit(&s.x, &y, sh.loss, reg, &FitOptions::default()).map_err(numerical)?;
            match sh.model.label_space() {
                LabelSpace::BinaryPM1 => test_error(sh.model, &fit.theta_hat, cfg.replication.test_points, idx),
                LabelSpace::Real => excess_risk(sh.model, &fit.theta_hat)
                    .ok_or_else(|| CliError::Numerical("regression error needs θ*".into())),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    row.empirical_error = stats::mean(&errs);
    row.empirical_stderr = if errs.len() > 1 { stats::stderr(&errs) } else { f64::NAN };
    if !row.converged {
        row.message = "fixed point did not converge".into();
    }
    Ok(())
}

pub fn sweep_cmd(cfg: &Config, out: &Path) -> Result<bool, CliError> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [sweep] section".into()))?;
    let Resolved { model, loss, reg, .. } = cfg.resolve()?;
    let p = model.dim();
    if sweep.parameter == SweepParameter::Phi && p < 2 {
        return Err(CliError::Config("a phi sweep needs p >= 2".into()));
    }
    let surrogate = model.gaussian_surrogate().map_err(|e| CliError::Config(e.to_string()))?;
    // one panel for the whole grid unless the panel depends on the shift
    let lfmm = matches!(model, DataModel::Lfmm(_));
    let panel = if lfmm { None } else { Some(build_panel(cfg, &model, &reg)?) };
    let surrogate_panel = if lfmm { None } else { Some(build_panel(cfg, &surrogate, &reg)?) };
    let shared = Shared {
        cfg,
        model: &model,
        surrogate: &surrogate,
        loss: &loss,
        panel: panel.as_ref(),
        surrogate_panel: surrogate_panel.as_ref(),
    };

    let rows: Vec<SweepRow> = sweep
        .values
        .par_iter()
        .enumerate()
        .map(|(k, &value)| {
            let mut row = SweepRow {
                value,
                theory_error: f64::NAN,
                gaussian_score_error: f64::NAN,
                gaussian_data_error: f64::NAN,
                empirical_error: f64::NAN,
                empirical_stderr: f64::NAN,
                ks_law_baseline: f64::NAN,
                alpha_star: f64::NAN,
                converged: false,
                message: String::new(),
            };
            let point_reg = match sweep.parameter {
                SweepParameter::Lambda => reg.with_lambda(value),
                SweepParameter::Phi => reg.with_shift(config::angle(value, sweep.shift_scale, p).expect("p >= 2")),
            };
            let result = point_reg
                .map_err(|e| CliError::Config(e.to_string()))
                .and_then(|r| sweep_point(&shared, &r, k, &mut row));
            if let Err(e) = result {
                row.converged = false;
                row.message = e.to_string();
            }
            row
        })
        .collect();

    let csv_path = out.join("sweep.csv");
    let mut w = csv_writer(&csv_path)?;
    let err = csv_err(&csv_path);
    w.write_record([
        "value",
        "theory_error",
        "gaussian_score_error",
        "gaussian_data_error",
        "empirical_error",
        "empirical_stderr",
        "ks_law_baseline",
        "alpha_star",
        "converged",
        "message",
    ])
    .map_err(&err)?;
    for r in &rows {
        w.write_record([
            fmt(r.value),
            fmt(r.theory_error),
            fmt(r.gaussian_score_error),
            fmt(r.gaussian_data_error),
            fmt(r.empirical_error),
            fmt(r.empirical_stderr),
            fmt(r.ks_law_baseline),
            fmt(r.alpha_star),
            r.converged.to_string(),
            r.message.clone(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", csv_path.display())))?;
    write_json(&out.join("sweep.json"), &SweepOutput { config: cfg, rows: &rows })?;
    Ok(rows.iter().all(|r| r.converged))
}

#[derive(Serialize)]
struct HistClass {
    label: Option<f64>,
    prior: f64,
    test_points: usize,
    ks_theory: f64,
    ks_baseline: f64,
}

#[derive(Serialize)]
struct HistOutput<'a> {
    config: &'a Config,
    solution: SolutionJson,
    columns: Vec<String>,
    /// test scores outside the grid, left out of the counts
    out_of_range: usize,
    ks_theory: f64,
    ks_baseline: f64,
    classes: Vec<HistClass>,
}

/// A weighted sum of score laws.
struct Mixture(Vec<(f64, ScoreLaw)>);

impl Mixture {
    fn pdf(&self, t: f64) -> Result<f64, CliError> {
        self.0
            .iter()
            .try_fold(0.0, |s, (w, l)| Ok(s + w * l.pdf(t).map_err(numerical)?))
    }

    fn cdf_many(&self, ts: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; ts.len()];
        for (w, l) in &self.0 {
            for (o, f) in out.iter_mut().zip(l.cdf_many(ts)) {
                *o += w * f;
            }
        }
        out
    }
}

pub fn score_hist_cmd(cfg: &Config, out: &Path) -> Result<bool, CliError> {
    let Resolved { model, loss, reg, .. } = cfg.resolve()?;
    let panel = build_panel(cfg, &model, &reg)?;
    let th = theory(cfg, &model, &loss, &reg, &panel, None)?;
    let sol = &th.sol;
    if sol.alpha_star == 0.0 {
        return Err(CliError::Numerical("degenerate solution (alpha* = 0): the score law has no density".into()));
    }
    let seed = rng::derive(cfg.seed, rng::domain::PROJECTION, 0);
    // (label, prior, law, baseline) per class, or one pooled entry
    let parts: Vec<(Option<f64>, f64, ScoreLaw, ScoreLaw)> = match model.label_space() {
        LabelSpace::BinaryPM1 => {
            let laws = class_laws(&model, sol, cfg.score.m, seed)?;
            let bases = baseline_laws(&classes(&model)?, sol)?;
            laws.into_iter()
                .map(|(label, prior, law)| {
                    let base = bases.iter().find(|b| b.0 == label).expect("same classes").2.clone();
                    (Some(label), prior, law, base)
                })
                .collect()
        }
        LabelSpace::Real => vec![(
            None,
            1.0,
            score::predict(&model, sol, cfg.score.m, seed).map_err(numerical)?,
            score::gaussian_baseline(&model.moments(), sol).map_err(numerical)?,
        )],
    };
    let theory_mix = Mixture(parts.iter().map(|p| (p.1, p.2.clone())).collect());
    let base_mix = Mixture(parts.iter().map(|p| (p.1, p.3.clone())).collect());

    let train = model
        .sample(cfg.n, rng::derive(cfg.seed, rng::domain::SAMPLE, 0))
        .map_err(numerical)?;
    let y: Vec<f64> = train.y.iter().copied().collect();
    let fit = erm::fit(&train.x, &y, &loss, &reg, &FitOptions::default()).map_err(numerical)?;
    let m = cfg.score.test_points;
    let mut scores = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for c in 0..m.div_ceil(TEST_CHUNK) {
        let count = TEST_CHUNK.min(m - c * TEST_CHUNK);
        let s = model
            .sample(count, rng::derive(cfg.seed, rng::domain::TEST, c as u64))
            .map_err(numerical)?;
        scores.extend(s.x.tr_mul(&fit.theta_hat).iter().copied());
        labels.extend(s.y.iter().copied());
    }

    let all: Vec<&ScoreLaw> = parts.iter().flat_map(|p| [&p.2, &p.3]).collect();
    let range = score::threshold_grid(&all, 2);
    let (lo, hi) = (range[0], range[1]);
    let bins = cfg.score.bins;
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![vec![0usize; bins]; parts.len()];
    let mut out_of_range = 0;
    for (&s, &l) in scores.iter().zip(&labels) {
        let b = ((s - lo) / width).floor();
        if !(b >= 0.0 && b < bins as f64) {
            out_of_range += 1;
            continue;
        }
        let k = parts.iter().position(|p| p.0.is_none_or(|lab| lab == l)).expect("label of a known class");
        counts[k][b as usize] += 1;
    }

    let mut columns: Vec<String> = ["grid", "theory_pdf", "baseline_pdf", "empirical_pdf"]
        .map(String::from)
        .to_vec();
    for p in &parts {
        columns.push(match p.0 {
            Some(l) => format!("count_class_{l:+}"),
            None => "count_all".into(),
        });
    }
    let csv_path = out.join("score_hist.csv");
    let mut w = csv_writer(&csv_path)?;
    let err = csv_err(&csv_path);
    w.write_record(&columns).map_err(&err)?;
    for b in 0..bins {
        let t = lo + (b as f64 + 0.5) * width;
        let total: usize = counts.iter().map(|c| c[b]).sum();
        let mut rec = vec![
            fmt(t),
            fmt(theory_mix.pdf(t)?),
            fmt(base_mix.pdf(t)?),
            fmt(total as f64 / (m as f64 * width)),
        ];
        rec.extend(counts.iter().map(|c| c[b].to_string()));
        w.write_record(&rec).map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", csv_path.display())))?;

    let mut hist_classes = Vec::new();
    for p in &parts {
        let own: Vec<f64> = scores
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| p.0.is_none_or(|lab| lab == l))
            .map(|(&s, _)| s)
            .collect();
        if own.is_empty() {
            return Err(CliError::Numerical(format!("no test point in class {:?}; raise score.test_points", p.0)));
        }
        hist_classes.push(HistClass {
            label: p.0,
            prior: p.1,
            test_points: own.len(),
            ks_theory: score::ks_distance(&p.2, &own).map_err(numerical)?,
            ks_baseline: score::ks_distance(&p.3, &own).map_err(numerical)?,
        });
    }
    let ok = converged(&th);
    write_json(
        &out.join("score_hist.json"),
        &HistOutput {
            config: cfg,
            solution: sol.into(),
            columns,
            out_of_range,
            ks_theory: score::ks_smooth(&scores, sol.alpha_star, |s| theory_mix.cdf_many(s)),
            ks_baseline: score::ks_smooth(&scores, sol.alpha_star, |s| base_mix.cdf_many(s)),
            classes: hist_classes,
        },
    )?;
    Ok(ok)
}
