//! Flexible (entropy-cost) information acquisition in the continuous-time
//! Kyle model.
//!
//! The crate is organised bottom-up:
//!
//! * [`dist`] – one-dimensional laws, normal special functions and quadrature rules.
//! * [`transport`] – quantile functions, Wasserstein-2 distances, the Gelbrich
//!   bound and the monotone pricing map.
//! * [`sinkhorn`] – log-domain Sinkhorn solvers for the Bayes-plausibility
//!   multipliers.
//! * [`infoacq`] – the informed trader's acquisition problem: normal prior in
//!   closed form, logit posteriors, equilibrium reports, discrete-signal
//!   optimisation and comparative statics.
//! * [`kylesim`] – Monte Carlo simulation of the Brownian-bridge equilibrium.

pub mod dist;
pub mod error;
pub mod infoacq;
pub mod kylesim;
pub mod sinkhorn;
pub mod transport;

pub use error::{Error, Result};
