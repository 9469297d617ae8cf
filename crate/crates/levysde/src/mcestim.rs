//! Monte Carlo engine: deterministic ensemble runs, integration-by-parts
//! identity checks with standard errors, and kernel estimators of the
//! transition density p, the score g = ∂θ log p, and G = ∂²θθ log p + g².
//!
//! Determinism contract: path i draws its jumps from seed mix(master, i),
//! estimator reductions are pairwise sums over path order, and repeated
//! runs with one master seed are bit-identical regardless of thread count.
//! Common random numbers across θ fall out of the same contract: the jump
//! law does not depend on θ, so shifted-θ ensembles reuse identical jump
//! paths and only the drift is re-integrated.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::EstimError;
use crate::jumpsim::{integrate_path, JumpSampler};
use crate::malliavin::{weights_for_path, MalliavinWeights};
use crate::model::Model;
use crate::numerics::{mean_se, mix_seed, pairwise_sum, sample_std};
use crate::varsens::{propagate_sensitivities, VariationalBundle};

/// Ensemble parameters. `fd_step_theta` drives the common-random-number
/// finite differences in θ.
#[derive(Clone, Debug, Serialize)]
pub struct EnsembleConfig {
    pub n: usize,
    pub t: f64,
    pub x0: f64,
    pub theta: f64,
    pub eps: f64,
    pub h: f64,
    pub master_seed: u64,
    pub fd_step_theta: f64,
    /// Replaces the Silverman bandwidth when positive.
    pub bandwidth_override: Option<f64>,
}

impl EnsembleConfig {
    fn check(&self) -> Result<(), EstimError> {
        if self.n < 2 {
            return Err(EstimError::EnsembleTooSmall(self.n));
        }
        assert!(self.fd_step_theta > 0.0, "fd_step_theta must be positive");
        Ok(())
    }
}

/// Registered smooth test functions for expectation functionals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TestFunction {
    One,
    Id,
    Sin,
    Square,
    /// x²/(1+x²)
    BoundedRational,
}

impl TestFunction {
    pub fn parse(s: &str) -> Result<Self, EstimError> {
        match s {
            "one" => Ok(Self::One),
            "id" => Ok(Self::Id),
            "sin" => Ok(Self::Sin),
            "square" => Ok(Self::Square),
            "bounded-rational" => Ok(Self::BoundedRational),
            other => Err(EstimError::UnknownTestFunction(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::One => "one",
            Self::Id => "id",
            Self::Sin => "sin",
            Self::Square => "square",
            Self::BoundedRational => "bounded-rational",
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::One => 1.0,
            Self::Id => x,
            Self::Sin => x.sin(),
            Self::Square => x * x,
            Self::BoundedRational => x * x / (1.0 + x * x),
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match self {
            Self::One => 0.0,
            Self::Id => 1.0,
            Self::Sin => x.cos(),
            Self::Square => 2.0 * x,
            Self::BoundedRational => {
                let d = 1.0 + x * x;
                2.0 * x / (d * d)
            }
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match self {
            Self::One => 0.0,
            Self::Id => 0.0,
            Self::Sin => -x.sin(),
            Self::Square => 2.0,
            Self::BoundedRational => {
                let d = 1.0 + x * x;
                (2.0 - 6.0 * x * x) / (d * d * d)
            }
        }
    }
}

/// Weight applied inside E[f(X_T) · w].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum WeightKind {
    None,
    Xi1,
    Xi2,
}

/// Monte Carlo estimate with exclusion accounting
/// (`n_used + n_excluded` = ensemble size).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_used: usize,
    pub n_excluded: usize,
}

/// Everything downstream consumers read off one simulated path at one θ.
#[derive(Clone, Debug)]
pub struct PathOutcome {
    pub x_t: f64,
    pub bundle: Option<VariationalBundle>,
    pub weights: Option<MalliavinWeights>,
}

impl PathOutcome {
    pub fn xi(&self, weight: WeightKind) -> Option<f64> {
        match weight {
            WeightKind::None => Some(1.0),
            WeightKind::Xi1 => self.weights.as_ref()?.xi1,
            WeightKind::Xi2 => self.weights.as_ref()?.xi2,
        }
    }
}

/// Runs the ensemble and maps each path's outcomes (one per requested θ,
/// weights computed where `sens[j]` is set) through `f`, collecting in
/// path order. The per-path jump skeleton is sampled once and shared
/// across θ values.
pub fn map_paths<T, F>(
    model: &Model,
    cfg: &EnsembleConfig,
    thetas: &[f64],
    sens: &[bool],
    f: F,
) -> Result<Vec<T>, EstimError>
where
    T: Send,
    F: Fn(u64, &[PathOutcome]) -> T + Sync,
{
    cfg.check()?;
    assert_eq!(thetas.len(), sens.len());
    let sampler = JumpSampler::new(&model.levy, cfg.eps)?;
    (0..cfg.n as u64)
        .into_par_iter()
        .map(|i| {
            let jumps = sampler.sample(cfg.t, mix_seed(cfg.master_seed, i));
            let mut outs = Vec::with_capacity(thetas.len());
            for (j, &theta) in thetas.iter().enumerate() {
                let skel = integrate_path(&jumps, &model.drift, theta, cfg.x0, cfg.h)?;
                let (bundle, weights) = if sens[j] {
                    let b = propagate_sensitivities(&skel, &jumps, &model.drift, &model.cutoff)?;
                    let w = weights_for_path(&jumps, &b, &model.levy, &model.cutoff);
                    (Some(b), Some(w))
                } else {
                    (None, None)
                };
                outs.push(PathOutcome { x_t: skel.terminal(), bundle, weights });
            }
            Ok(f(i, &outs))
        })
        .collect::<Result<Vec<T>, EstimError>>()
}

/// Mean and standard error of f(X_T)·weight over non-degenerate paths.
pub fn mc_expectation(
    model: &Model,
    cfg: &EnsembleConfig,
    f: TestFunction,
    weight: WeightKind,
) -> Result<McEstimate, EstimError> {
    let need_sens = weight != WeightKind::None;
    let vals = map_paths(model, cfg, &[cfg.theta], &[need_sens], |_, outs| {
        let o = &outs[0];
        o.xi(weight).map(|w| f.eval(o.x_t) * w)
    })?;
    let used: Vec<f64> = vals.iter().filter_map(|v| *v).collect();
    if used.is_empty() {
        return Err(EstimError::AllPathsDegenerate { n: cfg.n });
    }
    let (value, std_error) = mean_se(&used);
    Ok(McEstimate { value, std_error, n_used: used.len(), n_excluded: cfg.n - used.len() })
}

/// Exclusion fraction above which identity reports are marked invalid.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.2;

/// One derivative-identity comparison: finite difference in θ on the left,
/// weighted expectation on the right.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub order: u8,
    pub f: TestFunction,
    /// Central finite difference of E f(X_T) in θ (common random numbers).
    pub left: McEstimate,
    /// E[f(X_T) Ξ^order] over non-degenerate paths.
    pub right: McEstimate,
    pub diff: f64,
    /// Standard error of the paired per-path difference.
    pub se_diff: f64,
    pub z: f64,
    pub excluded_fraction: f64,
    /// False when more than [`MAX_EXCLUDED_FRACTION`] of paths were
    /// degenerate.
    pub valid: bool,
}

/// Checks ∂θ E f(X_T) = E[f Ξ¹] (order 1) or ∂²θθ E f(X_T) = E[f Ξ²]
/// (order 2). The left side re-integrates the identical jump ensemble at
/// θ ± fd_step_theta; the z-score is computed from the per-path paired
/// differences, which keeps the comparison sharp under the strong
/// left/right correlation.
pub fn check_derivative_identity(
    model: &Model,
    cfg: &EnsembleConfig,
    order: u8,
    f: TestFunction,
) -> Result<IdentityReport, EstimError> {
    assert!(order == 1 || order == 2, "order must be 1 or 2");
    let d = cfg.fd_step_theta;
    let thetas = [cfg.theta - d, cfg.theta, cfg.theta + d];
    let weight = if order == 1 { WeightKind::Xi1 } else { WeightKind::Xi2 };
    let samples = map_paths(model, cfg, &thetas, &[false, true, false], |_, outs| {
        let (lo, mid, hi) = (outs[0].x_t, outs[1].x_t, outs[2].x_t);
        let fd = if order == 1 {
            (f.eval(hi) - f.eval(lo)) / (2.0 * d)
        } else {
            (f.eval(hi) - 2.0 * f.eval(mid) + f.eval(lo)) / (d * d)
        };
        (fd, outs[1].xi(weight).map(|w| f.eval(mid) * w))
    })?;

    let n = samples.len();
    let fds: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let rights: Vec<f64> = samples.iter().filter_map(|s| s.1).collect();
    let m = rights.len();
    if m == 0 {
        return Err(EstimError::AllPathsDegenerate { n });
    }
    let (left_v, left_se) = mean_se(&fds);
    let (right_v, right_se) = mean_se(&rights);
    // paired comparison: mean(c) = LEFT - RIGHT with
    // c_i = fd_i - (n/m) right_i 1{included}
    let scale = n as f64 / m as f64;
    let paired: Vec<f64> = samples
        .iter()
        .map(|s| s.0 - scale * s.1.unwrap_or(0.0))
        .collect();
    let (diff, se_diff) = mean_se(&paired);
    let z = if se_diff > 0.0 { diff / se_diff } else { 0.0 };
    let excluded_fraction = (n - m) as f64 / n as f64;
    Ok(IdentityReport {
        order,
        f,
        left: McEstimate { value: left_v, std_error: left_se, n_used: n, n_excluded: 0 },
        right: McEstimate { value: right_v, std_error: right_se, n_used: m, n_excluded: n - m },
        diff,
        se_diff,
        z,
        excluded_fraction,
        valid: excluded_fraction <= MAX_EXCLUDED_FRACTION,
    })
}

/// Pointwise kernel estimate at a grid ordinate; `est` is `None` where the
/// regression mass floor fails.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GridEstimate {
    pub y: f64,
    pub est: Option<McEstimate>,
}

/// Silverman's rule h = 1.06 σ̂ n^{-1/5}, floored away from zero so a
/// point-mass sample degrades to equal weights instead of 0/0.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let sd = sample_std(xs);
    let n = xs.len().max(1) as f64;
    let h = 1.06 * sd * n.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1e-9
    }
}

#[inline]
fn gauss_kernel(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Minimum effective sample count behind a kernel-regression value.
pub const MASS_FLOOR_EFFECTIVE: f64 = 5.0;

/// Nadaraya-Watson estimate at `y` over (x, w) samples: Σ w K_h(x-y) / Σ
/// K_h(x-y), with a delta-method standard error and the effective-count
/// mass floor. Returns (value, se, effective n).
pub(crate) fn nadaraya_watson(xs: &[f64], ws: &[f64], y: f64, h: f64) -> Option<(f64, f64, f64)> {
    debug_assert_eq!(xs.len(), ws.len());
    if xs.is_empty() {
        return None;
    }
    let k: Vec<f64> = xs.iter().map(|&x| gauss_kernel((x - y) / h) / h).collect();
    let s0 = pairwise_sum(&k);
    let k0 = gauss_kernel(0.0) / h;
    if s0 < MASS_FLOOR_EFFECTIVE * k0 {
        return None;
    }
    let kw: Vec<f64> = k.iter().zip(ws).map(|(&ki, &wi)| ki * wi).collect();
    let value = pairwise_sum(&kw) / s0;
    let resid: Vec<f64> = k.iter().zip(ws).map(|(&ki, &wi)| ki * ki * (wi - value) * (wi - value)).collect();
    let se = pairwise_sum(&resid).sqrt() / s0;
    Some((value, se, s0 / k0))
}

fn collect_xw(
    model: &Model,
    cfg: &EnsembleConfig,
    weight: WeightKind,
) -> Result<(Vec<f64>, Vec<f64>, usize), EstimError> {
    let vals = map_paths(model, cfg, &[cfg.theta], &[weight != WeightKind::None], |_, outs| {
        let o = &outs[0];
        o.xi(weight).map(|w| (o.x_t, w))
    })?;
    let mut xs = Vec::with_capacity(vals.len());
    let mut ws = Vec::with_capacity(vals.len());
    for v in vals.iter().flatten() {
        xs.push(v.0);
        ws.push(v.1);
    }
    let excluded = vals.len() - xs.len();
    Ok((xs, ws, excluded))
}

fn bandwidth(cfg: &EnsembleConfig, xs: &[f64]) -> f64 {
    match cfg.bandwidth_override {
        Some(h) if h > 0.0 => h,
        _ => silverman_bandwidth(xs),
    }
}

/// Gaussian-kernel density estimate of X_T at each grid point, with
/// pointwise standard errors. Uses every path (no weights involved).
pub fn kernel_density(model: &Model, cfg: &EnsembleConfig, y_grid: &[f64]) -> Result<Vec<GridEstimate>, EstimError> {
    if y_grid.is_empty() {
        return Err(EstimError::EmptyGrid);
    }
    let (xs, _, _) = collect_xw(model, cfg, WeightKind::None)?;
    let h = bandwidth(cfg, &xs);
    let n = xs.len();
    Ok(y_grid
        .par_iter()
        .map(|&y| {
            let k: Vec<f64> = xs.iter().map(|&x| gauss_kernel((x - y) / h) / h).collect();
            let (value, std_error) = mean_se(&k);
            GridEstimate { y, est: Some(McEstimate { value, std_error, n_used: n, n_excluded: 0 }) }
        })
        .collect())
}

/// Nadaraya-Watson estimate of the conditional weight expectation at each
/// grid point: order 1 regresses Ξ¹ (the score estimate ĝ), order 2
/// regresses Ξ² (the estimate Ĝ of ∂²θθ log p + g²).
pub fn kernel_g(model: &Model, cfg: &EnsembleConfig, y_grid: &[f64], order: u8) -> Result<Vec<GridEstimate>, EstimError> {
    assert!(order == 1 || order == 2);
    if y_grid.is_empty() {
        return Err(EstimError::EmptyGrid);
    }
    let weight = if order == 1 { WeightKind::Xi1 } else { WeightKind::Xi2 };
    let (xs, ws, excluded) = collect_xw(model, cfg, weight)?;
    if xs.is_empty() {
        return Err(EstimError::AllPathsDegenerate { n: cfg.n });
    }
    let h = bandwidth(cfg, &xs);
    Ok(y_grid
        .par_iter()
        .map(|&y| GridEstimate {
            y,
            est: nadaraya_watson(&xs, &ws, y, h).map(|(value, std_error, n_eff)| McEstimate {
                value,
                std_error,
                n_used: n_eff as usize,
                n_excluded: excluded,
            }),
        })
        .collect())
}

/// Ĝ(y) - ĝ(y)²: the kernel estimate of ∂²θθ log p_T(x0, y), with a
/// delta-method standard error that keeps the Ĝ/ĝ covariance (both sides
/// share one ensemble and one set of kernel weights). Undefined markers
/// propagate from the mass floor.
pub fn log_density_second_derivative(
    model: &Model,
    cfg: &EnsembleConfig,
    y_grid: &[f64],
) -> Result<Vec<GridEstimate>, EstimError> {
    if y_grid.is_empty() {
        return Err(EstimError::EmptyGrid);
    }
    let vals = map_paths(model, cfg, &[cfg.theta], &[true], |_, outs| {
        let o = &outs[0];
        match (o.xi(WeightKind::Xi1), o.xi(WeightKind::Xi2)) {
            (Some(w1), Some(w2)) => Some((o.x_t, w1, w2)),
            _ => None,
        }
    })?;
    let mut xs = Vec::new();
    let mut w1s = Vec::new();
    let mut w2s = Vec::new();
    for v in vals.iter().flatten() {
        xs.push(v.0);
        w1s.push(v.1);
        w2s.push(v.2);
    }
    if xs.is_empty() {
        return Err(EstimError::AllPathsDegenerate { n: cfg.n });
    }
    let excluded = vals.len() - xs.len();
    let h = bandwidth(cfg, &xs);
    let k0 = gauss_kernel(0.0) / h;
    Ok(y_grid
        .par_iter()
        .map(|&y| {
            let k: Vec<f64> = xs.iter().map(|&x| gauss_kernel((x - y) / h) / h).collect();
            let s0 = pairwise_sum(&k);
            if s0 < MASS_FLOOR_EFFECTIVE * k0 {
                return GridEstimate { y, est: None };
            }
            let kg: Vec<f64> = k.iter().zip(&w1s).map(|(&ki, &wi)| ki * wi).collect();
            let kgg: Vec<f64> = k.iter().zip(&w2s).map(|(&ki, &wi)| ki * wi).collect();
            let ghat = pairwise_sum(&kg) / s0;
            let cap_g = pairwise_sum(&kgg) / s0;
            // delta method for Ghat - ghat^2 with shared kernel weights
            let (mut var_g, mut var_gg, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..xs.len() {
                let r1 = k[i] * (w1s[i] - ghat);
                let r2 = k[i] * (w2s[i] - cap_g);
                var_g += r1 * r1;
                var_gg += r2 * r2;
                cov += r1 * r2;
            }
            let s0sq = s0 * s0;
            let var = (var_gg - 4.0 * ghat * cov + 4.0 * ghat * ghat * var_g) / s0sq;
            GridEstimate {
                y,
                est: Some(McEstimate {
                    value: cap_g - ghat * ghat,
                    std_error: var.max(0.0).sqrt(),
                    n_used: (s0 / k0) as usize,
                    n_excluded: excluded,
                }),
            }
        })
        .collect())
}
