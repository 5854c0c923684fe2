//! Exact high-dimensional asymptotics of convex regularized empirical risk
//! minimization under general, possibly non-Gaussian, data designs.
//!
//! The estimator under study is
//!
//! ```text
//! θ̂ = argmin_θ (1/n) Σ_i L_{y_i}(x_iᵀθ) + ρ(θ)
//! ```
//!
//! The crate is organised around the pipeline used to study it:
//!
//! * [`loss`] and [`regularizer`]: scalar calculus for the loss (prox, Moreau
//!   envelope, the `ξ` residual map) and smooth penalties with their quadratic
//!   surrogates.
//! * [`data`]: generative designs with exact moments, plus CSV ingestion.
//! * [`rmt`]: resolvent deterministic equivalents.
//! * [`fixed_point`]: the deterministic fixed-point system for the limiting
//!   mean `μ*` and fluctuation scale `α*`, its ridge closed form and the
//!   multiclass variant.
//! * [`erm`]: a Newton ERM engine and replication studies, the empirical side
//!   of every comparison.
//! * [`score`]: the predicted law of test scores `μ*ᵀx + α* z`, its Gaussian
//!   baseline, error curves and distances.
//!
//! Vectors and matrices are [`nalgebra`] types. Data matrices are stored with
//! one sample per column (`p × n`).

// `!(x > 0.0)` guards deliberately reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod erm;
mod error;
pub mod fixed_point;
pub mod linalg;
pub mod loss;
pub mod quadrature;
pub mod regularizer;
pub mod rmt;
pub mod rng;
pub mod score;
pub mod stats;

pub use data::{DataModel, Moments};
pub use erm::{fit, replicate, ErmFit, ReplicationSummary};
pub use error::{Error, Result};
pub use fixed_point::{solve, ExpectationPanel, FixedPointSolution, PanelOptions, SolveOptions};
pub use loss::{LabelSpace, Loss, LossKind};
pub use regularizer::Regularizer;
pub use score::ScoreLaw;
