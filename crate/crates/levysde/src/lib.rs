//! Simulation and drift inference for one-dimensional Lévy-driven SDEs
//!
//!     dX_t = a_θ(X_t) dt + dZ_t,
//!
//! where `Z` is a pure-jump Lévy process (no diffusion component). The crate
//! simulates jump paths under a small-jump truncation, propagates pathwise
//! sensitivities with respect to the drift parameter θ and with respect to a
//! localized perturbation of every jump size, assembles the weight
//! functionals Ξ¹ and Ξ² whose ensemble averages reproduce ∂θ E f(X_T) and
//! ∂²θθ E f(X_T), estimates the score ∂θ log p and the second log-density
//! derivative by kernel regression, and fits θ from discrete observations by
//! a damped Newton iteration on the estimated score.
//!
//! Modules mirror the pipeline:
//!
//! - [`model`]: drift family, Lévy measure, cutoff ρ, flow Q_c, validation
//! - [`jumpsim`]: compound-Poisson path sampling and jump-adapted Euler
//! - [`varsens`]: the coupled sensitivity cascade and its per-path oracles
//! - [`malliavin`]: δ(1), the divergence operator, Ξ¹ and Ξ²
//! - [`mcestim`]: Monte Carlo ensembles, identity checks, kernel estimators
//! - [`likefit`]: log-likelihood derivatives over observations, Newton MLE
//! - [`config`]: the TOML run configuration shared by the CLI and FFI

pub mod config;
pub mod error;
pub mod jumpsim;
pub mod likefit;
pub mod malliavin;
pub mod mcestim;
pub mod model;
pub mod numerics;
pub mod varsens;

pub use config::RunConfig;
pub use error::{ConfigError, EstimError, FitError, ModelError, SimError};
pub use model::{CutoffSpec, DriftSpec, LevyMeasureSpec, Model, ValidationReport};
