//! Gradient estimators for parameters of unrolled computation graphs.
//!
//! The crate is organised around the [`UnrolledSystem`] trait: a deterministic
//! dynamical system `s_t = f(s_{t-1}; θ)` with a per-step loss. Every estimator
//! consumes partial unrolls of such a system:
//!
//! * truncated antithetic evolution strategies ([`estimators::es_step`]),
//! * persistent evolution strategies ([`estimators::pes_step`]) and its
//!   analytic-gradient variant ([`estimators::pes_analytic_step`]),
//! * truncated backpropagation ([`estimators::tbptt_step`]),
//! * exact forward-mode accumulation ([`estimators::rtrl_step`]) and its
//!   rank-one approximation ([`estimators::uoro_step`]).
//!
//! [`tasks`] holds concrete systems, [`optim`] the outer-loop optimizers and
//! [`variance`] the tools used to measure and predict estimator variance.

pub mod error;
pub mod estimators;
pub mod optim;
pub mod rng;
pub mod tasks;
pub mod unroll;
pub mod variance;

mod par;

pub use error::{Error, Result};
pub use estimators::{EstimatorKind, GradientEstimate, NoiseSpec, OnlineEstimator};
pub use unroll::{
    full_gradient, telescope, unroll, unroll_retaining, window_gradient, StepJacobians,
    SystemState, Telescoped, UnrollResult, UnrolledSystem, WindowGradient,
};
