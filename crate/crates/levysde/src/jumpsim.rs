//! Jump path sampling under a small-jump truncation and jump-adapted Euler
//! integration of the state equation.
//!
//! Jumps with |u| < eps are discarded and not variance-matched (the model
//! has no diffusion component), so the pathwise perturbation calculus stays
//! exact on the simulated path; the induced bias is O(∫_{|u|<eps} u² μ(du)).
//! The deterministic drift rate `comp_drift = -∫_{eps<=|u|<=1} u μ(du)`
//! restores the compensated decomposition of Z.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::error::SimError;
use crate::model::{CutoffSpec, DriftSpec, LevyMeasureSpec};
use crate::numerics::integrate_log;

const TABLE_NODES: usize = 4096;

/// One jump event: time in (0, T], size with |size| >= eps.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct JumpEvent {
    pub time: f64,
    pub size: f64,
}

/// Sampled jump skeleton of Z over [0, T] above the truncation level.
#[derive(Clone, Debug)]
pub struct JumpPath {
    pub horizon: f64,
    pub eps: f64,
    /// Events with strictly increasing times.
    pub events: Vec<JumpEvent>,
    /// -∫_{eps<=|u|<=1} u μ(du): drift compensating the truncation and the
    /// compensation of jumps in [eps, 1].
    pub comp_drift: f64,
    pub seed: u64,
}

impl JumpPath {
    /// Same events and bookkeeping with every jump size mapped through `f`.
    /// Used by the jump-size perturbation oracle; `comp_drift` is part of
    /// the deterministic dynamics and stays fixed.
    pub fn map_sizes(&self, mut f: impl FnMut(f64) -> f64) -> JumpPath {
        JumpPath {
            horizon: self.horizon,
            eps: self.eps,
            events: self
                .events
                .iter()
                .map(|e| JumpEvent { time: e.time, size: f(e.size) })
                .collect(),
            comp_drift: self.comp_drift,
            seed: self.seed,
        }
    }
}

/// λ(eps) = μ({|u| >= eps}): density part by log-panel quadrature plus tail
/// atoms. Zero density contribution when eps >= u0.
pub fn intensity_above(levy: &LevyMeasureSpec, eps: f64) -> f64 {
    let mut lam = levy.tail.iter().map(|a| a.mass).sum::<f64>();
    if eps < levy.u0 {
        lam += integrate_log(|u| levy.sigma(u) + levy.sigma(-u), eps, levy.u0, 96);
    }
    lam
}

/// comp_drift = -∫_{eps<=|u|<=1} u μ(du). The density part integrates the
/// mirrored combination u (σ(u) - σ(-u)) over u > 0, so symmetric measures
/// give exactly zero.
pub fn compensating_drift(levy: &LevyMeasureSpec, eps: f64) -> f64 {
    let hi = levy.u0.min(1.0);
    let mut v = 0.0;
    if eps < hi {
        v -= integrate_log(|u| u * (levy.sigma(u) - levy.sigma(-u)), eps, hi, 96);
    }
    for a in &levy.tail {
        if a.u.abs() >= eps && a.u.abs() <= 1.0 {
            v -= a.u * a.mass;
        }
    }
    v
}

/// ∫_{eps<=|u|<=u0} χ(u) σ(u) du by the exact antiderivative χσ = -(σρ)':
///
///     σ(eps)ρ(eps) - σ(-eps)ρ(-eps) - σ(u0)ρ(u0) + σ(-u0)ρ(-u0),
///
/// where the u0 terms vanish because ρ(±u0) = 0. For symmetric σ the two
/// eps terms cancel and the compensator is exactly zero (χ is odd), which
/// is what makes δ(1) centered. Returns 0 for eps >= u0.
pub fn compensator_chi(levy: &LevyMeasureSpec, cutoff: &CutoffSpec, eps: f64) -> f64 {
    if eps >= levy.u0 {
        return 0.0;
    }
    levy.sigma(eps) * cutoff.rho(eps) - levy.sigma(-eps) * cutoff.rho(-eps)
}

/// Direct log-panel quadrature of ∫_{eps<=|u|<=u0} χσ du; cross-check for
/// [`compensator_chi`].
pub fn compensator_chi_quadrature(levy: &LevyMeasureSpec, cutoff: &CutoffSpec, eps: f64) -> f64 {
    if eps >= levy.u0 {
        return 0.0;
    }
    let integrand = |u: f64| {
        let pos = crate::model::chi(u, levy, cutoff).unwrap_or(0.0) * levy.sigma(u);
        let neg = crate::model::chi(-u, levy, cutoff).unwrap_or(0.0) * levy.sigma(-u);
        pos + neg
    };
    integrate_log(integrand, eps, levy.u0, 128)
}

/// Inverse-CDF sampler for μ restricted to {|u| >= eps}: a monotone
/// tabulation of the density part on log-spaced nodes per sign (linear
/// interpolation in CDF space) plus the tail atoms.
#[derive(Clone, Debug)]
pub struct JumpSampler {
    eps: f64,
    /// Positive-side nodes eps..u0 and cumulative masses; empty if eps >= u0.
    pos_nodes: Vec<f64>,
    pos_cum: Vec<f64>,
    neg_cum: Vec<f64>,
    pos_mass: f64,
    neg_mass: f64,
    atoms: Vec<(f64, f64)>,
    /// Total intensity λ(eps) implied by the tabulation.
    pub lambda: f64,
    comp_drift: f64,
}

impl JumpSampler {
    pub fn new(levy: &LevyMeasureSpec, eps: f64) -> Result<Self, SimError> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(SimError::Tabulation { reason: format!("eps must be positive and finite, got {eps}") });
        }
        let mut pos_nodes = Vec::new();
        let mut pos_cum = Vec::new();
        let mut neg_cum = Vec::new();
        let (mut pos_mass, mut neg_mass) = (0.0, 0.0);
        if eps < levy.u0 {
            let ratio = (levy.u0 / eps).powf(1.0 / (TABLE_NODES - 1) as f64);
            pos_nodes = (0..TABLE_NODES)
                .map(|i| if i + 1 == TABLE_NODES { levy.u0 } else { eps * ratio.powi(i as i32) })
                .collect();
            pos_cum = Vec::with_capacity(TABLE_NODES);
            neg_cum = Vec::with_capacity(TABLE_NODES);
            pos_cum.push(0.0);
            neg_cum.push(0.0);
            for i in 1..TABLE_NODES {
                let (a, b) = (pos_nodes[i - 1], pos_nodes[i]);
                let mp = crate::numerics::integrate(|u| levy.sigma(u), a, b, 1);
                let mn = crate::numerics::integrate(|u| levy.sigma(-u), a, b, 1);
                if !(mp.is_finite() && mn.is_finite() && mp >= 0.0 && mn >= 0.0) {
                    return Err(SimError::Tabulation {
                        reason: format!("non-finite or negative segment mass on [{a}, {b}]"),
                    });
                }
                pos_cum.push(pos_cum[i - 1] + mp);
                neg_cum.push(neg_cum[i - 1] + mn);
            }
            pos_mass = *pos_cum.last().unwrap();
            neg_mass = *neg_cum.last().unwrap();
        }
        let atoms: Vec<(f64, f64)> =
            levy.tail.iter().filter(|a| a.u.abs() >= eps).map(|a| (a.u, a.mass)).collect();
        let lambda = pos_mass + neg_mass + atoms.iter().map(|&(_, m)| m).sum::<f64>();
        if !lambda.is_finite() {
            return Err(SimError::NonFiniteIntensity { eps });
        }
        Ok(Self {
            eps,
            pos_nodes,
            pos_cum,
            neg_cum,
            pos_mass,
            neg_mass,
            atoms,
            lambda,
            comp_drift: compensating_drift(levy, eps),
        })
    }

    fn invert(nodes: &[f64], cum: &[f64], target: f64) -> f64 {
        let idx = cum.partition_point(|&c| c < target).clamp(1, cum.len() - 1);
        let (c0, c1) = (cum[idx - 1], cum[idx]);
        let (u0, u1) = (nodes[idx - 1], nodes[idx]);
        if c1 > c0 {
            u0 + (u1 - u0) * (target - c0) / (c1 - c0)
        } else {
            u0
        }
    }

    fn sample_size(&self, rng: &mut ChaCha8Rng) -> f64 {
        let mut v = rng.random::<f64>() * self.lambda;
        if v < self.pos_mass {
            return Self::invert(&self.pos_nodes, &self.pos_cum, v);
        }
        v -= self.pos_mass;
        if v < self.neg_mass {
            return -Self::invert(&self.pos_nodes, &self.neg_cum, v);
        }
        v -= self.neg_mass;
        for &(u, m) in &self.atoms {
            if v < m {
                return u;
            }
            v -= m;
        }
        // numerical edge of the last category
        self.atoms.last().map(|&(u, _)| u).unwrap_or_else(|| *self.pos_nodes.last().unwrap())
    }

    /// Samples the jump skeleton over [0, horizon]. Fully deterministic
    /// given `seed`: count, then times, then sizes, from one ChaCha stream.
    pub fn sample(&self, horizon: f64, seed: u64) -> JumpPath {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean = self.lambda * horizon;
        let count = if mean > 0.0 {
            Poisson::new(mean).expect("positive mean").sample(&mut rng) as usize
        } else {
            0
        };
        let mut times: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * horizon).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // ties have probability zero; nudge so event times stay strict
        for i in 1..times.len() {
            if times[i] <= times[i - 1] {
                times[i] = f64::from_bits(times[i - 1].to_bits() + 1);
            }
        }
        let events = times
            .into_iter()
            .map(|t| JumpEvent { time: t, size: self.sample_size(&mut rng) })
            .collect();
        JumpPath { horizon, eps: self.eps, events, comp_drift: self.comp_drift, seed }
    }
}

/// Convenience one-shot sampler; ensembles should build a [`JumpSampler`]
/// once and reuse it.
pub fn sample_jumps(levy: &LevyMeasureSpec, horizon: f64, eps: f64, seed: u64) -> Result<JumpPath, SimError> {
    Ok(JumpSampler::new(levy, eps)?.sample(horizon, seed))
}

/// Jump-adapted integration grid with state values. Jump times are grid
/// nodes; at a jump index both the left limit and the post-jump value are
/// stored.
#[derive(Clone, Debug, Default)]
pub struct SkeletonPath {
    pub theta: f64,
    pub x0: f64,
    pub comp_drift: f64,
    pub times: Vec<f64>,
    /// Left limits X(t-).
    pub x_pre: Vec<f64>,
    /// Post-jump values; equal to `x_pre` off jump nodes.
    pub x_post: Vec<f64>,
    /// Jump size at each node (0.0 off jump nodes).
    pub jump_size: Vec<f64>,
    pub is_jump: Vec<bool>,
}

impl SkeletonPath {
    pub fn terminal(&self) -> f64 {
        *self.x_post.last().expect("non-empty skeleton")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Explicit Euler between jumps with step <= h on a grid refined to include
/// every jump time; at a jump node the jump size is added after the Euler
/// step into that node.
pub fn integrate_path(
    jumps: &JumpPath,
    drift: &DriftSpec,
    theta: f64,
    x0: f64,
    h: f64,
) -> Result<SkeletonPath, SimError> {
    assert!(h > 0.0, "step bound h must be positive");
    let horizon = jumps.horizon;
    let n_guess = (horizon / h).ceil() as usize + 2 * jumps.events.len() + 2;
    let mut skel = SkeletonPath {
        theta,
        x0,
        comp_drift: jumps.comp_drift,
        times: Vec::with_capacity(n_guess),
        x_pre: Vec::with_capacity(n_guess),
        x_post: Vec::with_capacity(n_guess),
        jump_size: Vec::with_capacity(n_guess),
        is_jump: Vec::with_capacity(n_guess),
    };
    skel.times.push(0.0);
    skel.x_pre.push(x0);
    skel.x_post.push(x0);
    skel.jump_size.push(0.0);
    skel.is_jump.push(false);

    let mut x = x0;
    let mut t_prev = 0.0;
    let push_segment = |skel: &mut SkeletonPath,
                            x: &mut f64,
                            a: f64,
                            b: f64,
                            jump: Option<f64>|
     -> Result<(), SimError> {
        if b > a {
            let m = ((b - a) / h).ceil().max(1.0) as usize;
            let dt = (b - a) / m as f64;
            for k in 1..=m {
                let t_node = if k == m { b } else { a + dt * k as f64 };
                let xn = *x + (drift.eval(crate::model::DriftOrder::Value, theta, *x) + skel.comp_drift) * dt;
                if !xn.is_finite() {
                    return Err(SimError::NonFiniteState { t: t_node, x: xn });
                }
                *x = xn;
                skel.times.push(t_node);
                skel.x_pre.push(*x);
                if k == m {
                    if let Some(u) = jump {
                        *x += u;
                        skel.x_post.push(*x);
                        skel.jump_size.push(u);
                        skel.is_jump.push(true);
                        continue;
                    }
                }
                skel.x_post.push(*x);
                skel.jump_size.push(0.0);
                skel.is_jump.push(false);
            }
        } else if let Some(u) = jump {
            // jump exactly at the segment start (t = 0 boundary case)
            *x += u;
            let last = skel.times.len() - 1;
            skel.x_post[last] = *x;
            skel.jump_size[last] = u;
            skel.is_jump[last] = true;
        }
        Ok(())
    };

    for ev in &jumps.events {
        push_segment(&mut skel, &mut x, t_prev, ev.time.min(horizon), Some(ev.size))?;
        t_prev = ev.time.min(horizon);
    }
    push_segment(&mut skel, &mut x, t_prev, horizon, None)?;
    Ok(skel)
}
