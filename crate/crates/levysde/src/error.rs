//! Error types, one enum per pipeline stage.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unsupported drift derivative order (order_x={order_x}, order_theta={order_theta})")]
    UnsupportedDriftOrder { order_x: u8, order_theta: u8 },
    #[error("chi is undefined at u = 0")]
    ChiAtZero,
    #[error("invalid {name}: {reason}")]
    InvalidSpec { name: &'static str, reason: String },
    #[error("flow integration failed at q = {state}: step size underflow")]
    FlowStepUnderflow { state: f64 },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("jump intensity above eps = {eps} is not finite")]
    NonFiniteIntensity { eps: f64 },
    #[error("inverse-CDF tabulation failed: {reason}")]
    Tabulation { reason: String },
    #[error("non-finite state x = {x} at t = {t} (path aborted)")]
    NonFiniteState { t: f64, x: f64 },
    #[error("unstable step at t = {t}: 1 + dx_a*dt = {factor} <= 0, reduce h")]
    UnstableStep { t: f64, factor: f64 },
    #[error("non-finite sensitivity '{name}' at t = {t} (path aborted)")]
    NonFiniteSensitivity { name: &'static str, t: f64 },
    #[error("skeleton and jump path are inconsistent: {reason}")]
    InconsistentPath { reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum EstimError {
    #[error("all {n} paths are degenerate (no jump hit the cutoff support)")]
    AllPathsDegenerate { n: usize },
    #[error("unknown test function '{0}' (expected one|id|sin|square|bounded-rational)")]
    UnknownTestFunction(String),
    #[error("empty y grid")]
    EmptyGrid,
    #[error("ensemble size must be >= 2, got {0}")]
    EnsembleTooSmall(usize),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("observations are invalid: {0}")]
    BadObservations(String),
    #[error("theta0 = {theta0} lies outside the drift parameter domain [{lo}, {hi}]")]
    ThetaOutsideDomain { theta0: f64, lo: f64, hi: f64 },
    #[error("model carries no information about theta (second log-likelihood derivative is zero)")]
    NoInformation,
    #[error("more than {max_frac:.0}% of transitions dropped ({dropped}/{total}); estimate unreliable")]
    TooManyDropped { dropped: usize, total: usize, max_frac: f64 },
    #[error(transparent)]
    Estim(#[from] EstimError),
    #[error("observation io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{key} missing")]
    MissingKey { key: String },
    #[error("{key}: {reason}")]
    BadValue { key: String, reason: String },
    #[error("config file {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("config parse: {0}")]
    Parse(String),
}
