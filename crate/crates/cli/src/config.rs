//! Experiment configuration: a TOML file, deserialized into plain specs and
//! then resolved into library objects.

use std::path::{Path, PathBuf};

use erm_asymptotics::data::{BimodalLinear, ClassSpec, CoordinateLaw, GaussianLinear, Lfmm, MixtureClasses};
use erm_asymptotics::fixed_point::{PanelOptions, SolveOptions};
use erm_asymptotics::{data, rng, DataModel, Loss, LossKind, Regularizer};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    /// training set size
    pub n: usize,
    pub loss: LossName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub model: ModelSpec,
    pub regularizer: RegSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub replication: ReplicationConfig,
    #[serde(default)]
    pub score: ScoreConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    Squared,
    Logistic,
}

/// A vector in `Rᵖ`.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VectorSpec {
    #[default]
    Zeros,
    Constant {
        value: f64,
    },
    /// `scale · e_index` (0-based)
    Basis {
        index: usize,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `scale · g/‖g‖` with `g` standard normal from its own seed
    RandomUnit {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        seed: u64,
    },
    Explicit {
        values: Vec<f64>,
    },
    /// `scale · (−cos φ, sin φ, 0, …)`
    Angle {
        phi: f64,
        #[serde(default = "one")]
        scale: f64,
    },
}

/// A symmetric `p × p` matrix.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixSpec {
    Identity {
        #[serde(default = "one")]
        scale: f64,
    },
    /// `scale · ρ^|i−j|`
    Ar1 {
        rho: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Diagonal {
        values: Vec<f64>,
    },
    Explicit {
        rows: Vec<Vec<f64>>,
    },
}

impl Default for MatrixSpec {
    fn default() -> Self {
        MatrixSpec::Identity { scale: 1.0 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BimodalSpec {
    pub index: usize,
    #[serde(default = "three")]
    pub c: f64,
    #[serde(default = "half")]
    pub s: f64,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    Gaussian,
    Bimodal {
        #[serde(default = "three")]
        c: f64,
        #[serde(default = "half")]
        s: f64,
    },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub prior: f64,
    pub label: f64,
    pub mean: VectorSpec,
    #[serde(default)]
    pub cov: MatrixSpec,
    #[serde(default)]
    pub bimodal: Vec<BimodalSpec>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    GaussianLinear {
        p: usize,
        theta_star: VectorSpec,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default)]
        mean: VectorSpec,
        #[serde(default)]
        cov: MatrixSpec,
    },
    BimodalLinear {
        p: usize,
        theta_star: VectorSpec,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default)]
        mean: VectorSpec,
        #[serde(default)]
        cov: MatrixSpec,
        bimodal: BimodalSpec,
    },
    /// classes `∓mean` with labels `∓1` and a shared covariance
    SymmetricMixture {
        p: usize,
        mean: VectorSpec,
        #[serde(default)]
        cov: MatrixSpec,
        #[serde(default = "half")]
        prior_pos: f64,
        #[serde(default)]
        bimodal: Vec<BimodalSpec>,
    },
    Mixture {
        p: usize,
        classes: Vec<ClassConfig>,
    },
    Lfmm {
        p: usize,
        directions: Vec<VectorSpec>,
        signal: Vec<f64>,
        noise: Vec<NoiseSpec>,
        #[serde(default = "half")]
        prior_pos: f64,
    },
    /// header `x1,…,xp,y`; relative paths resolve against the config file
    Csv {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegSpec {
    /// `λ‖θ‖²`
    Ridge { lambda: f64 },
    /// `aᵀθ + λ‖θ‖²`
    ShiftedRidge { lambda: f64, shift: VectorSpec },
    /// `aᵀθ + λ‖θ‖² + ε Σ (√(1 + θᵢ²) − 1)`
    Smooth {
        lambda: f64,
        eps: f64,
        #[serde(default)]
        shift: VectorSpec,
    },
    /// `aᵀθ + ½θᵀHθ`
    Quadratic {
        #[serde(default)]
        shift: VectorSpec,
        hessian: MatrixSpec,
    },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub damping: f64,
    pub alpha_floor: f64,
    /// panel size `M`
    pub panel_size: usize,
    /// Gauss-Hermite order `K`
    pub quad_order: usize,
    pub antithetic: bool,
    pub moment_match: bool,
    /// extra solves from random starting points
    pub multistart: usize,
    pub max_refits: usize,
    pub refit_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolveOptions::default();
        let p = PanelOptions::default();
        SolverConfig {
            tol: s.tol,
            max_iters: s.max_iters,
            damping: s.damping,
            alpha_floor: s.alpha_floor,
            panel_size: p.size,
            quad_order: p.quad_order,
            antithetic: p.antithetic,
            moment_match: p.moment_match,
            multistart: 0,
            max_refits: 20,
            refit_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicationConfig {
    /// independent training sets `R`
    pub r: usize,
    /// fresh test draws for classification error
    pub test_points: usize,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        ReplicationConfig {
            r: 100,
            test_points: 100_000,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    /// mixture centers drawn for the predicted score law
    pub m: usize,
    pub bins: usize,
    pub test_points: usize,
    /// grid size for law-vs-law KS distances
    pub grid: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            m: 100_000,
            bins: 200,
            test_points: 100_000,
            grid: 2001,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Lambda,
    /// shift `a = shift_scale · (−cos φ, sin φ, 0, …)`
    Phi,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    #[serde(default = "one")]
    pub shift_scale: f64,
    /// training sets per point for the empirical error
    #[serde(default = "one_usize")]
    pub reps: usize,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn half() -> f64 {
    0.5
}

fn three() -> f64 {
    3.0
}

/// Reads and parses a config file. Relative CSV paths are rewritten
/// against the file's directory.
pub fn load(path: &Path) -> Result<Config, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: Config =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let ModelSpec::Csv { path: csv } = &mut cfg.model {
        if csv.is_relative() {
            if let Some(dir) = path.parent() {
                *csv = dir.join(&*csv);
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Library objects built from a config.
pub struct Resolved {
    pub model: DataModel,
    pub loss: Loss,
    pub reg: Regularizer,
    /// orthonormal factor directions of an LFMM
    pub directions: Vec<DVector<f64>>,
}

impl Config {
    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return bad("sweep.values must not be empty".into());
            }
            if s.reps == 0 {
                return bad("sweep.reps must be at least 1".into());
            }
        }
        let s = &self.solver;
        if s.panel_size == 0 || s.quad_order == 0 || s.max_iters == 0 {
            return bad("solver.panel_size, solver.quad_order and solver.max_iters must be positive".into());
        }
        if !(s.tol > 0.0 && s.damping > 0.0 && s.damping <= 1.0) {
            return bad("solver.tol must be positive and solver.damping in (0, 1]".into());
        }
        if self.score.m == 0 || self.score.bins == 0 || self.score.test_points == 0 || self.score.grid < 2 {
            return bad("score.m, score.bins and score.test_points must be positive and score.grid >= 2".into());
        }
        Ok(())
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.solver.tol,
            max_iters: self.solver.max_iters,
            damping: self.solver.damping,
            alpha_floor: self.solver.alpha_floor,
            ..SolveOptions::default()
        }
    }

    pub fn panel_options(&self, preserve: Vec<DVector<f64>>) -> PanelOptions {
        PanelOptions {
            size: self.solver.panel_size,
            quad_order: self.solver.quad_order,
            seed: rng::derive(self.seed, rng::domain::PANEL, 0),
            antithetic: self.solver.antithetic,
            moment_match: self.solver.moment_match,
            preserve,
        }
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let (model, directions) = self.build_model()?;
        let p = model.dim();
        let loss = Loss::new(match self.loss {
            LossName::Squared => LossKind::Squared,
            LossName::Logistic => LossKind::Logistic,
        });
        if loss.label_space() != model.label_space() {
            return Err(CliError::Config(format!(
                "loss {} does not fit the labels of model {}",
                loss.name(),
                model.kind_name()
            )));
        }
        let reg = match &self.regularizer {
            RegSpec::Ridge { lambda } => Regularizer::ridge(*lambda, p),
            RegSpec::ShiftedRidge { lambda, shift } => Regularizer::shifted_ridge(vector(shift, p, "regularizer.shift")?, *lambda),
            RegSpec::Smooth { lambda, eps, shift } => {
                Regularizer::smooth_separable(vector(shift, p, "regularizer.shift")?, *lambda, *eps)
            }
            RegSpec::Quadratic { shift, hessian } => Regularizer::quadratic(
                vector(shift, p, "regularizer.shift")?,
                matrix(hessian, p, "regularizer.hessian")?,
            ),
        }
        .map_err(|e| CliError::Config(format!("regularizer: {e}")))?;
        Ok(Resolved {
            model,
            loss,
            reg,
            directions,
        })
    }

    fn build_model(&self) -> Result<(DataModel, Vec<DVector<f64>>), CliError> {
        let wrap = |e: erm_asymptotics::Error| CliError::Config(format!("model: {e}"));
        let mut directions = Vec::new();
        let model = match &self.model {
            ModelSpec::GaussianLinear {
                p,
                theta_star,
                sigma,
                mean,
                cov,
            } => DataModel::GaussianLinear(linear(*p, theta_star, *sigma, mean, cov)?),
            ModelSpec::BimodalLinear {
                p,
                theta_star,
                sigma,
                mean,
                cov,
                bimodal,
            } => DataModel::BimodalLinear(
                BimodalLinear::new(linear(*p, theta_star, *sigma, mean, cov)?, bimodal.index, bimodal.c, bimodal.s)
                    .map_err(wrap)?,
            ),
            ModelSpec::SymmetricMixture {
                p,
                mean,
                cov,
                prior_pos,
                bimodal,
            } => {
                let mut mix = MixtureClasses::symmetric_binary(
                    vector(mean, *p, "model.mean")?,
                    matrix(cov, *p, "model.cov")?,
                    *prior_pos,
                )
                .map_err(wrap)?;
                for b in bimodal {
                    mix = mix.with_tag(b.index, CoordinateLaw::Bimodal { c: b.c, s: b.s }).map_err(wrap)?;
                }
                DataModel::MixtureClasses(mix)
            }
            ModelSpec::Mixture { p, classes } => {
                let specs = classes
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        Ok(ClassSpec {
                            prior: c.prior,
                            label: c.label,
                            mean: vector(&c.mean, *p, &format!("model.classes[{i}].mean"))?,
                            cov: matrix(&c.cov, *p, &format!("model.classes[{i}].cov"))?,
                            tags: c
                                .bimodal
                                .iter()
                                .map(|b| (b.index, CoordinateLaw::Bimodal { c: b.c, s: b.s }))
                                .collect(),
                        })
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                DataModel::MixtureClasses(MixtureClasses::new(specs).map_err(wrap)?)
            }
            ModelSpec::Lfmm {
                p,
                directions: dirs,
                signal,
                noise,
                prior_pos,
            } => {
                directions = dirs
                    .iter()
                    .enumerate()
                    .map(|(i, d)| vector(d, *p, &format!("model.directions[{i}]")))
                    .collect::<Result<Vec<_>, _>>()?;
                let laws = noise
                    .iter()
                    .map(|n| match *n {
                        NoiseSpec::Gaussian => CoordinateLaw::Gaussian,
                        NoiseSpec::Bimodal { c, s } => CoordinateLaw::Bimodal { c, s },
                    })
                    .collect();
                DataModel::Lfmm(Lfmm::new(*p, directions.clone(), signal.clone(), laws, *prior_pos).map_err(wrap)?)
            }
            ModelSpec::Csv { path } => data::load_csv(path).map_err(wrap)?,
        };
        Ok((model, directions))
    }
}

fn linear(
    p: usize,
    theta_star: &VectorSpec,
    sigma: f64,
    mean: &VectorSpec,
    cov: &MatrixSpec,
) -> Result<GaussianLinear, CliError> {
    GaussianLinear::new(
        vector(mean, p, "model.mean")?,
        matrix(cov, p, "model.cov")?,
        vector(theta_star, p, "model.theta_star")?,
        sigma,
    )
    .map_err(|e| CliError::Config(format!("model: {e}")))
}

pub fn vector(spec: &VectorSpec, p: usize, field: &str) -> Result<DVector<f64>, CliError> {
    if p == 0 {
        return Err(CliError::Config("model.p must be at least 1".into()));
    }
    let v = match spec {
        VectorSpec::Zeros => DVector::zeros(p),
        VectorSpec::Constant { value } => DVector::from_element(p, *value),
        VectorSpec::Basis { index, scale } => {
            if *index >= p {
                return Err(CliError::Config(format!("{field}: basis index {index} out of range for p = {p}")));
            }
            let mut v = DVector::zeros(p);
            v[*index] = *scale;
            v
        }
        VectorSpec::RandomUnit { scale, seed } => {
            let mut g = rng::stream(*seed, rng::domain::VECTOR, p as u64);
            let v = DVector::from_fn(p, |_, _| g.sample::<f64, _>(StandardNormal));
            let norm = v.norm();
            v * (*scale / norm)
        }
        VectorSpec::Explicit { values } => {
            if values.len() != p {
                return Err(CliError::Config(format!("{field}: {} values given, p = {p}", values.len())));
            }
            DVector::from_column_slice(values)
        }
        VectorSpec::Angle { phi, scale } => angle(*phi, *scale, p)
            .ok_or_else(|| CliError::Config(format!("{field}: an angle vector needs p >= 2")))?,
    };
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Config(format!("{field}: non-finite entries")));
    }
    Ok(v)
}

/// `scale · (−cos φ, sin φ, 0, …)`
pub fn angle(phi: f64, scale: f64, p: usize) -> Option<DVector<f64>> {
    if p < 2 {
        return None;
    }
    let mut v = DVector::zeros(p);
    v[0] = -scale * phi.cos();
    v[1] = scale * phi.sin();
    Some(v)
}

pub fn matrix(spec: &MatrixSpec, p: usize, field: &str) -> Result<DMatrix<f64>, CliError> {
    Ok(match spec {
        MatrixSpec::Identity { scale } => DMatrix::identity(p, p) * *scale,
        MatrixSpec::Ar1 { rho, scale } => DMatrix::from_fn(p, p, |i, j| scale * rho.powi(i.abs_diff(j) as i32)),
        MatrixSpec::Diagonal { values } => {
            if values.len() != p {
                return Err(CliError::Config(format!("{field}: {} diagonal values given, p = {p}", values.len())));
            }
            DMatrix::from_diagonal(&DVector::from_column_slice(values))
        }
        MatrixSpec::Explicit { rows } => {
            if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                return Err(CliError::Config(format!("{field}: expected a {p} x {p} matrix")));
            }
            DMatrix::from_fn(p, p, |i, j| rows[i][j])
        }
    })
}
