//! Deterministic fixed-point system for `(μ, α, κ, ν)` under a quadratic
//! regularizer `ρ(θ) = aᵀθ + ½θᵀHθ`:
//!
//! * `κ = (1/n) tr(C_x Q(ν))`
//! * `ν = E[z ξ(μᵀx + αz, κ)] / (ακ)`
//! * `α² = (A(ν)/κ²) E[ξ²]`
//! * `a + Hμ + E[x ξ] / κ = 0`
//!
//! with `z ~ N(0, 1)` independent of `(x, y)`. Expectations over `(x, y)` use
//! an [`ExpectationPanel`], those over `z` Gauss-Hermite.

mod panel;
mod ridge;

#[cfg(test)]
mod tests;

use nalgebra::{DMatrix, DVector};

pub use panel::{ExpectationPanel, PanelGroup, PanelOptions};
pub use ridge::{ridge_closed_form, RidgeClosedForm};

use crate::data::DataModel;
use crate::error::check_dim;
use crate::linalg;
use crate::loss::Loss;
use crate::regularizer::Regularizer;
use crate::rmt::ResolventContext;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// initial damping `δ`; halved whenever the residual grows
    pub damping: f64,
    pub alpha_floor: f64,
    pub initial_mu: Option<DVector<f64>>,
    pub initial_alpha: f64,
    pub initial_nu: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            max_iters: 500,
            damping: 0.5,
            alpha_floor: 1e-10,
            initial_mu: None,
            initial_alpha: 1.0,
            initial_nu: 0.5,
        }
    }
}

/// A point `(μ, α, κ, ν)` of the system.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointState {
    pub mu: DVector<f64>,
    pub alpha: f64,
    pub kappa: f64,
    pub nu: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointSolution {
    pub mu_star: DVector<f64>,
    pub alpha_star: f64,
    pub kappa_star: f64,
    pub nu_star: f64,
    /// `√E[ξ²] / κ`
    pub beta_star: f64,
    /// relative residuals of the κ, ν, α and μ equations
    pub residuals: [f64; 4],
    pub iterations: usize,
    pub converged: bool,
    /// α fell below the floor and was set to zero
    pub degenerate: bool,
}

impl FixedPointSolution {
    pub fn state(&self) -> FixedPointState {
        FixedPointState {
            mu: self.mu_star.clone(),
            alpha: self.alpha_star,
            kappa: self.kappa_star,
            nu: self.nu_star,
        }
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, &r| m.max(r))
    }
}

/// Per-class solution of the multiclass system.
#[derive(Clone, Debug, PartialEq)]
pub struct MulticlassSolution {
    pub mu_star: DVector<f64>,
    pub labels: Vec<f64>,
    pub priors: Vec<f64>,
    pub alpha: Vec<f64>,
    pub kappa: Vec<f64>,
    pub nu: Vec<f64>,
    pub beta: Vec<f64>,
    pub residuals: [f64; 4],
    pub iterations: usize,
    pub converged: bool,
    pub degenerate: bool,
}

pub fn solve(
    model: &DataModel,
    loss: &Loss,
    reg: &Regularizer,
    n: usize,
    panel: &ExpectationPanel,
    opts: &SolveOptions,
) -> Result<FixedPointSolution> {
    let engine = Engine::pooled(model, loss, reg, n, panel)?;
    let start = engine.initial(opts)?;
    let out = engine.iterate(start, opts)?;
    Ok(FixedPointSolution {
        mu_star: out.state.mu,
        alpha_star: out.state.alpha[0],
        kappa_star: out.state.kappa[0],
        nu_star: out.state.nu[0],
        beta_star: out.beta[0],
        residuals: out.residuals,
        iterations: out.iterations,
        converged: out.converged,
        degenerate: out.degenerate,
    })
}

/// Relative residuals of the four equations at `state`, in the order κ, ν,
/// α, μ. A state with `α = 0` is checked against the small-α limit of the
/// ν equation.
pub fn residuals(
    state: &FixedPointState,
    model: &DataModel,
    loss: &Loss,
    reg: &Regularizer,
    n: usize,
    panel: &ExpectationPanel,
) -> Result<[f64; 4]> {
    if !(state.kappa > 0.0) || !(state.alpha >= 0.0) || !(state.nu > 0.0) {
        return Err(Error::InvalidArgument(
            "state needs κ > 0, ν > 0 and α ≥ 0".into(),
        ));
    }
    let engine = Engine::pooled(model, loss, reg, n, panel)?;
    check_dim(engine.h.nrows(), state.mu.len())?;
    let s = State {
        mu: state.mu.clone(),
        alpha: vec![state.alpha],
        kappa: vec![state.kappa],
        nu: vec![state.nu],
    };
    Ok(engine.step(&s, 0.0)?.residuals)
}

/// The per-class system: `Q(ν) = (Σ_h γ_h ν_h C_h + H)⁻¹` with one
/// `(α_ℓ, κ_ℓ, ν_ℓ)` per class and a shared `μ`. Experimental.
pub fn solve_multiclass(
    model: &DataModel,
    loss: &Loss,
    reg: &Regularizer,
    n: usize,
    panel: &ExpectationPanel,
    opts: &SolveOptions,
) -> Result<MulticlassSolution> {
    let engine = Engine::per_class(model, loss, reg, n, panel)?;
    let start = engine.initial(opts)?;
    let out = engine.iterate(start, opts)?;
    Ok(MulticlassSolution {
        mu_star: out.state.mu,
        labels: engine.groups.iter().map(|g| g.label).collect(),
        priors: engine.groups.iter().map(|g| g.prior).collect(),
        alpha: out.state.alpha,
        kappa: out.state.kappa,
        nu: out.state.nu,
        beta: out.beta,
        residuals: out.residuals,
        iterations: out.iterations,
        converged: out.converged,
        degenerate: out.degenerate,
    })
}

/// Outcome of alternating surrogate construction and solving.
#[derive(Clone, Debug)]
pub struct RefitOutcome {
    pub solution: FixedPointSolution,
    /// the quadratic surrogate built at the final `μ*`'s predecessor
    pub surrogate: Regularizer,
    /// `‖μ_{k+1} − μ_k‖` after each refit
    pub steps: Vec<f64>,
    pub stable: bool,
}

/// Handles a smooth non-quadratic `ρ`: build the surrogate at the current
/// `μ`, solve, and repeat from the new `μ*` until successive solutions move
/// by at most `step_tol` or `max_refits` re-solves have run.
#[allow(clippy::too_many_arguments)]
pub fn solve_with_refit(
    model: &DataModel,
    loss: &Loss,
    reg: &Regularizer,
    n: usize,
    panel: &ExpectationPanel,
    opts: &SolveOptions,
    max_refits: usize,
    step_tol: f64,
) -> Result<RefitOutcome> {
    let p = reg.dim();
    let mut mu = opts.initial_mu.clone().unwrap_or_else(|| DVector::zeros(p));
    let mut surrogate = reg.quadratic_surrogate(&mu)?;
    let mut solution = solve(model, loss, &surrogate, n, panel, opts)?;
    let mut steps = Vec::new();
    let mut stable = reg.is_quadratic();
    for _ in 0..max_refits {
        if stable {
            break;
        }
        mu = solution.mu_star.clone();
        surrogate = reg.quadratic_surrogate(&mu)?;
        let warm = SolveOptions {
            initial_mu: Some(mu.clone()),
            initial_alpha: solution.alpha_star.max(opts.alpha_floor),
            initial_nu: solution.nu_star,
            ..opts.clone()
        };
        solution = solve(model, loss, &surrogate, n, panel, &warm)?;
        let step = (&solution.mu_star - &mu).norm();
        steps.push(step);
        stable = step <= step_tol;
    }
    Ok(RefitOutcome {
        solution,
        surrogate,
        steps,
        stable,
    })
}

/// Internal state with one `(α, κ, ν)` per group.
#[derive(Clone, Debug)]
struct State {
    mu: DVector<f64>,
    alpha: Vec<f64>,
    kappa: Vec<f64>,
    nu: Vec<f64>,
}

struct Group {
    label: f64,
    prior: f64,
    members: Vec<usize>,
    cov: DMatrix<f64>,
    second: DMatrix<f64>,
}

struct Engine<'a> {
    loss: &'a Loss,
    panel: &'a ExpectationPanel,
    n: usize,
    a: DVector<f64>,
    h: DMatrix<f64>,
    groups: Vec<Group>,
    /// spectral shortcut for the single-group traces
    spectral: Option<ResolventContext>,
}

struct Step {
    next: State,
    residuals: [f64; 4],
    beta: Vec<f64>,
}

struct Outcome {
    state: State,
    residuals: [f64; 4],
    beta: Vec<f64>,
    iterations: usize,
    converged: bool,
    degenerate: bool,
}

fn rel(x: f64, y: f64, floor: f64) -> f64 {
    let d = (x - y).abs();
    if d == 0.0 {
        0.0
    } else {
        d / x.abs().max(y.abs()).max(floor)
    }
}

fn max4(r: &[f64; 4]) -> f64 {
    r.iter().fold(0.0f64, |m, &v| if v.is_nan() { f64::INFINITY } else { m.max(v) })
}

impl<'a> Engine<'a> {
    fn common(
        model: &DataModel,
        loss: &'a Loss,
        reg: &Regularizer,
        n: usize,
        panel: &'a ExpectationPanel,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let p = model.dim();
        check_dim(p, reg.dim())?;
        check_dim(p, panel.dim())?;
        if n == 0 {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        panel.check_labels(loss)?;
        reg.quadratic_parts().ok_or_else(|| {
            Error::InvalidArgument(
                "the fixed-point system needs a quadratic regularizer; build one with quadratic_surrogate".into(),
            )
        })
    }

    fn pooled(
        model: &DataModel,
        loss: &'a Loss,
        reg: &Regularizer,
        n: usize,
        panel: &'a ExpectationPanel,
    ) -> Result<Self> {
        let (a, h) = Self::common(model, loss, reg, n, panel)?;
        let moments = model.moments();
        let spectral = ResolventContext::new(moments.cov.clone(), h.clone(), n)?;
        let group = Group {
            label: f64::NAN,
            prior: 1.0,
            members: (0..panel.groups.len()).collect(),
            second: moments.second_moment(),
            cov: moments.cov,
        };
        Ok(Engine {
            loss,
            panel,
            n,
            a,
            h,
            groups: vec![group],
            spectral: Some(spectral),
        })
    }

    fn per_class(
        model: &DataModel,
        loss: &'a Loss,
        reg: &Regularizer,
        n: usize,
        panel: &'a ExpectationPanel,
    ) -> Result<Self> {
        let (a, h) = Self::common(model, loss, reg, n, panel)?;
        let classes = model.classes().ok_or_else(|| {
            Error::InvalidArgument(format!("{} has no class structure", model.kind_name()))
        })?;
        let mut groups = Vec::with_capacity(classes.len());
        for c in classes {
            let member = panel
                .groups
                .iter()
                .position(|g| g.label == Some(c.label))
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("panel has no samples of class {}", c.label))
                })?;
            groups.push(Group {
                label: c.label,
                prior: c.prior,
                members: vec![member],
                second: c.moments.second_moment(),
                cov: c.moments.cov,
            });
        }
        // validates H once, as the pooled path does
        linalg::cholesky(&h, "regularizer hessian")?;
        Ok(Engine {
            loss,
            panel,
            n,
            a,
            h,
            groups,
            spectral: None,
        })
    }

    fn initial(&self, opts: &SolveOptions) -> Result<State> {
        let p = self.h.nrows();
        let mu = match &opts.initial_mu {
            Some(m) => {
                check_dim(p, m.len())?;
                m.clone()
            }
            None => DVector::zeros(p),
        };
        if !(opts.initial_nu > 0.0) || !(opts.initial_alpha >= 0.0) {
            return Err(Error::InvalidArgument("initial ν must be positive and α nonnegative".into()));
        }
        if !(opts.damping > 0.0 && opts.damping <= 1.0) {
            return Err(Error::InvalidArgument("damping must lie in (0, 1]".into()));
        }
        let k = self.groups.len();
        let nu = vec![opts.initial_nu; k];
        let (kappa, _) = self.traces(&nu)?;
        Ok(State {
            mu,
            alpha: vec![opts.initial_alpha; k],
            kappa,
            nu,
        })
    }

    /// `κ_ℓ(ν)` and `A_{ℓh}(ν) = (1/n) tr(C_ℓ Q C_h Q)`.
    fn traces(&self, nu: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        if let Some(ctx) = &self.spectral {
            let a = DMatrix::from_element(1, 1, ctx.a_of_nu(nu[0]));
            return Ok((vec![ctx.kappa_of_nu(nu[0])], a));
        }
        let mut m = self.h.clone();
        for (g, &v) in self.groups.iter().zip(nu) {
            m += &g.cov * (g.prior * v);
        }
        let q = linalg::cholesky(&m, "Σ γ ν C + H")?.inverse();
        let cq: Vec<DMatrix<f64>> = self.groups.iter().map(|g| &g.cov * &q).collect();
        let nf = self.n as f64;
        let kappa = cq.iter().map(|x| x.trace() / nf).collect();
        let k = cq.len();
        let mut a = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in i..k {
                let v = linalg::trace_of_product(&cq[i], &cq[j]) / nf;
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        Ok((kappa, a))
    }

    /// Evaluates every equation at `s` and returns the damped move towards
    /// the candidates (`δ = 0` leaves the state unchanged).
    fn step(&self, s: &State, delta: f64) -> Result<Step> {
        let k = self.groups.len();
        let sets: Vec<(Vec<usize>, f64, f64)> = self
            .groups
            .iter()
            .enumerate()
            .map(|(i, g)| (g.members.clone(), s.alpha[i], s.kappa[i]))
            .collect();
        let stats = self.panel.evaluate(self.loss, &s.mu, &sets);
        let (kappa_c, a) = self.traces(&s.nu)?;

        let floor = 1e-300;
        let mut r = [0.0f64; 4];
        let mut nu_c = vec![0.0; k];
        let mut alpha_sq_c = vec![0.0; k];
        let mut beta = vec![0.0; k];
        for l in 0..k {
            nu_c[l] = if s.alpha[l] > 0.0 {
                stats[l].ez_xi / (s.alpha[l] * s.kappa[l])
            } else {
                stats[l].e_dxi / s.kappa[l]
            };
            alpha_sq_c[l] = (0..k)
                .map(|h| self.groups[h].prior * a[(h, l)] * stats[h].e_xi2 / s.kappa[h].powi(2))
                .sum();
            beta[l] = stats[l].e_xi2.sqrt() / s.kappa[l];
            r[0] = r[0].max(rel(s.kappa[l], kappa_c[l], floor));
            r[1] = r[1].max(rel(s.nu[l], nu_c[l], floor));
            r[2] = r[2].max(rel(s.alpha[l].powi(2), alpha_sq_c[l], 1e-20));
        }

        let reg_grad = &self.a + &self.h * &s.mu;
        let mut data_grad = DVector::zeros(s.mu.len());
        let mut precond = self.h.clone();
        for (l, g) in self.groups.iter().enumerate() {
            data_grad.axpy(g.prior / s.kappa[l], &stats[l].ex_xi, 1.0);
            precond += &g.second * (g.prior * stats[l].e_dxi / s.kappa[l]);
        }
        let grad = &reg_grad + &data_grad;
        let scale = reg_grad.norm().max(data_grad.norm()).max(1e-12);
        r[3] = if grad.norm() == 0.0 { 0.0 } else { grad.norm() / scale };

        let mut next = s.clone();
        if delta > 0.0 {
            let dir = linalg::cholesky(&linalg::symmetrize(&precond), "μ-step preconditioner")?
                .solve(&grad);
            next.mu.axpy(-delta, &dir, 1.0);
            for l in 0..k {
                next.kappa[l] = (1.0 - delta) * s.kappa[l] + delta * kappa_c[l];
                next.nu[l] = ((1.0 - delta) * s.nu[l] + delta * nu_c[l]).max(1e-300);
                next.alpha[l] = (1.0 - delta) * s.alpha[l] + delta * alpha_sq_c[l].max(0.0).sqrt();
            }
        }
        Ok(Step {
            next,
            residuals: r,
            beta,
        })
    }

    fn iterate(&self, start: State, opts: &SolveOptions) -> Result<Outcome> {
        let mut state = start;
        let mut delta = opts.damping;
        let mut previous = f64::INFINITY;
        let mut degenerate = false;
        let mut iterations = 0;
        loop {
            let step = self.step(&state, delta)?;
            let worst = max4(&step.residuals);
            if worst <= opts.tol || iterations >= opts.max_iters || !worst.is_finite() {
                return Ok(Outcome {
                    converged: worst <= opts.tol,
                    degenerate: degenerate && state.alpha.contains(&0.0),
                    state,
                    residuals: step.residuals,
                    beta: step.beta,
                    iterations,
                });
            }
            // a flat residual (α shrinking geometrically) should not
            // throttle the step, only a genuine increase
            if worst > previous * 1.01 {
                delta = (delta * 0.5).max(1.0 / 1024.0);
            } else {
                delta = (delta * 1.25).min(opts.damping);
            }
            previous = worst;
            state = step.next;
            for a in &mut state.alpha {
                if *a < opts.alpha_floor {
                    *a = 0.0;
                    degenerate = true;
                }
            }
            iterations += 1;
        }
    }
}
