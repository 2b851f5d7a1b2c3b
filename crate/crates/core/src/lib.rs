//! Tamed Euler–Maruyama integration of neutral stochastic differential delay
//! equations (NSDDEs)
//!
//! ```text
//! d[X(t) - D(X(t - tau))] = b(X(t), X(t - tau)) dt + sigma(X(t), X(t - tau)) dw(t)
//! ```
//!
//! together with the machinery needed to check exponential mean-square and
//! almost-sure stability of the numerical solution empirically:
//!
//! * [`model`] – systems, initial segments and sampling-based assumption checkers.
//! * [`grid`] – the time grid, reproducible Brownian increments and the delay buffer.
//! * [`scheme`] – tamed and classic steppers, the piecewise-constant interpolant
//!   and the per-step martingale decomposition.
//! * [`stability`] – ensemble moments, exponent estimators, the decay-base
//!   certificate and the weighted-bound check.
//! * [`cli`] – configuration parsing, built-in systems and the experiment runner.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod grid;
pub mod model;
pub mod scheme;
pub mod stability;
mod stats;

pub use error::{Error, Result};
pub use grid::{BrownianDriver, DelayBuffer, TimeGrid};
pub use model::{FnSystem, InitialSegment, NeutralSystem, StabilityParams};
pub use scheme::{Path, PathState, SchemeConfig, SchemeKind, StepDecomposition};
pub use stability::{MomentTrajectory, StabilityCertificate};

/// Column vector in `R^n`.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix, used for `n x noise_dim` diffusion coefficients.
pub type Matrix = nalgebra::DMatrix<f64>;
