//! Stochastic optimization by online linear regression of gradients.
//!
//! The optimizer tracks a small set of directions in parameter space, fits a
//! linear model of the gradient along them with exponentially weighted least
//! squares, and steps toward (or, for negative curvature, away from) the
//! modeled stationary point. Directions outside the tracked subspace receive
//! plain gradient descent and slowly rotate the subspace toward themselves.
//!
//! Module map:
//!
//! - [`regression`]: EMA sufficient statistics and curvature / Hessian / stationary point estimates.
//! - [`linalg`]: small dense kernels (Jacobi eigensolver, SPD right-division).
//! - [`subspace`]: the tracked basis, exploration and orthonormalization.
//! - [`optimizer`]: the full optimizer plus SGD, momentum and ADAM baselines.
//! - [`problems`]: benchmark objectives with noisy gradient oracles.
//! - [`harness`]: experiment configs, seeded runs, CSV / JSON traces.

// `!(x > y)` is used deliberately so that NaN fails validation; index loops
// mirror the matrix notation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod harness;
pub mod linalg;
pub mod optimizer;
pub mod problems;
pub mod regression;
pub mod selftest;
pub mod subspace;

pub use error::{Error, Result};
pub use linalg::{EigenPair, Matrix};
pub use optimizer::{
    Baseline, BaselineKind, GradientOracle, Mode, Ogr, OgrConfig, Optimizer, StepCap, StepReport,
};
pub use problems::{Problem, ProblemSpec};
pub use regression::{CurvatureModel, RegressionState};
pub use subspace::Basis;
