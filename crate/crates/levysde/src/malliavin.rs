//! The divergence side of the pathwise calculus: δ(1), its jump-direction
//! derivative, the generic divergence δ(G) = δ(1)G - DG, and the weight
//! functionals
//!
//!     Ξ¹ = δ(∂θX / DX),
//!     Ξ² = δ( (δ((∂θX)²/DX) + ∂²θθX) / DX ),
//!
//! expanded over bundle entries via the product/quotient chain rule. Each
//! nested divergence is eliminated with δ(G) = δ(1)G - DG, so with
//! A = ∂θX, B = DX,
//!
//!     delta_ratio   = A²δ(1)/B + A²Y2/B² - 2AW1/B
//!     d_delta_ratio = (2A/B)(δ(1)W1 - W2) + A²Dδ(1)/B - 2W1²/B
//!                     + (A/B)²(Y3 - δ(1)Y2) + 4AW1Y2/B² - 2(AY2)²/B³
//!     Ξ²            = -d_delta_ratio/B - V1/B
//!                     + (δ(1)/B + Y2/B²)(delta_ratio + Z2).
//!
//! The V1 term enters with a minus sign: applying δ(G) = δ(1)G - DG to
//! G = (delta_ratio + Z2)/B differentiates Z2 into V1 inside DG. A plus
//! sign breaks both the two-route equality below and the second-derivative
//! integration-by-parts identity.
//!
//! Paths whose DX falls below [`Y_MIN`] are degenerate (no jump hit the
//! cutoff support); their weights are undefined and excluded from ensemble
//! averages, with the exclusion counted by the callers.

use serde::Serialize;

use crate::jumpsim::{compensator_chi, JumpPath};
use crate::model::{chi, chi_prime, CutoffSpec, LevyMeasureSpec};
use crate::varsens::VariationalBundle;

/// Degeneracy threshold for DX.
pub const Y_MIN: f64 = 1e-12;

/// Per-path weight functionals. `xi1`/`xi2` are `None` on degenerate paths.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MalliavinWeights {
    pub delta1: f64,
    pub d_delta1: f64,
    pub xi1: Option<f64>,
    /// δ((∂θX)²/DX)
    pub delta_ratio: Option<f64>,
    /// D δ((∂θX)²/DX)
    pub d_delta_ratio: Option<f64>,
    pub xi2: Option<f64>,
    pub degenerate: bool,
}

/// δ(1) = Σ_k χ(u_k) 1{|u_k| <= u0} - T ∫_{eps<=|u|<=u0} χσ du. Both the
/// sum and the compensator are truncated at the same eps: jumps below eps
/// do not exist in the simulation, so the compensated integral starts
/// there. E δ(1) = 0 under the sampled law.
pub fn delta_one(jumps: &JumpPath, levy: &LevyMeasureSpec, cutoff: &CutoffSpec) -> f64 {
    let mut s = 0.0;
    for ev in &jumps.events {
        if ev.size.abs() <= levy.u0 {
            s += chi(ev.size, levy, cutoff).expect("jump sizes are nonzero");
        }
    }
    s - jumps.horizon * compensator_chi(levy, cutoff, jumps.eps)
}

/// D δ(1) = Σ_k (χ'ρ)(u_k): differentiating u_k ↦ Q_c(u_k) inside δ(1);
/// the compensator does not depend on c.
pub fn d_delta_one(jumps: &JumpPath, levy: &LevyMeasureSpec, cutoff: &CutoffSpec) -> f64 {
    let mut s = 0.0;
    for ev in &jumps.events {
        if ev.size.abs() <= levy.u0 {
            s += chi_prime(ev.size, levy, cutoff).expect("jump sizes are nonzero") * cutoff.rho(ev.size);
        }
    }
    s
}

/// δ(G) = δ(1) G - DG for G with E(δ(1)G)² < ∞.
pub fn divergence(g_val: f64, dg_val: f64, delta1: f64) -> f64 {
    delta1 * g_val - dg_val
}

/// Ξ¹ = Z1 δ(1)/Y1 + Z1 Y2/Y1² - W1/Y1, undefined on degenerate paths.
pub fn xi1(bundle: &VariationalBundle, delta1: f64) -> Option<f64> {
    if bundle.y1 < Y_MIN {
        return None;
    }
    let b = bundle.y1;
    Some(bundle.z1 * delta1 / b + bundle.z1 * bundle.y2 / (b * b) - bundle.w1 / b)
}

/// Ξ² via the closed-form expansion; see the module header. Undefined on
/// degenerate paths.
pub fn xi2(bundle: &VariationalBundle, delta1: f64, d_delta1: f64) -> Option<f64> {
    let parts = xi2_parts(bundle, delta1, d_delta1)?;
    Some(parts.2)
}

/// (delta_ratio, d_delta_ratio, xi2).
pub fn xi2_parts(bundle: &VariationalBundle, delta1: f64, d_delta1: f64) -> Option<(f64, f64, f64)> {
    if bundle.y1 < Y_MIN {
        return None;
    }
    let a = bundle.z1;
    let b = bundle.y1;
    let (y2, y3, w1, w2, v1, z2) = (bundle.y2, bundle.y3, bundle.w1, bundle.w2, bundle.v1, bundle.z2);
    let delta_ratio = a * a * delta1 / b + a * a * y2 / (b * b) - 2.0 * a * w1 / b;
    let d_delta_ratio = (2.0 * a / b) * (delta1 * w1 - w2) + a * a * d_delta1 / b - 2.0 * w1 * w1 / b
        + (a / b) * (a / b) * (y3 - delta1 * y2)
        + 4.0 * a * w1 * y2 / (b * b)
        - 2.0 * (a * y2) * (a * y2) / (b * b * b);
    let xi2 = -d_delta_ratio / b - v1 / b + (delta1 / b + y2 / (b * b)) * (delta_ratio + z2);
    Some((delta_ratio, d_delta_ratio, xi2))
}

/// Assembles all weights for one path.
pub fn weights_for_path(
    jumps: &JumpPath,
    bundle: &VariationalBundle,
    levy: &LevyMeasureSpec,
    cutoff: &CutoffSpec,
) -> MalliavinWeights {
    let delta1 = delta_one(jumps, levy, cutoff);
    let d_delta1 = d_delta_one(jumps, levy, cutoff);
    let degenerate = bundle.y1 < Y_MIN;
    let parts = xi2_parts(bundle, delta1, d_delta1);
    MalliavinWeights {
        delta1,
        d_delta1,
        xi1: xi1(bundle, delta1),
        delta_ratio: parts.map(|p| p.0),
        d_delta_ratio: parts.map(|p| p.1),
        xi2: parts.map(|p| p.2),
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jumpsim::JumpEvent;

    fn const_levy() -> LevyMeasureSpec {
        LevyMeasureSpec::constant_sigma(1.0, 1.0, 3.0, 1.0).unwrap()
    }

    fn path(events: Vec<JumpEvent>) -> JumpPath {
        JumpPath { horizon: 1.0, eps: 0.01, events, comp_drift: 0.0, seed: 0 }
    }

    #[test]
    fn delta_one_two_jump_example() {
        // chi = -2u under constant sigma; symmetric compensator vanishes
        let levy = const_levy();
        let cutoff = CutoffSpec::smoothstep(0.3, 1.0).unwrap();
        let jumps = path(vec![
            JumpEvent { time: 0.2, size: 0.1 },
            JumpEvent { time: 0.7, size: -0.2 },
        ]);
        let d1 = delta_one(&jumps, &levy, &cutoff);
        assert!((d1 - 0.2).abs() < 1e-12, "delta(1) = {d1}");
    }

    #[test]
    fn delta_one_no_jumps() {
        let levy = const_levy();
        let cutoff = CutoffSpec::smoothstep(0.3, 1.0).unwrap();
        assert_eq!(delta_one(&path(vec![]), &levy, &cutoff), 0.0);
    }

    #[test]
    fn d_delta_one_single_small_jump() {
        // sigma constant: chi' = -2 inside u1, rho(0.1) = 0.01
        let levy = const_levy();
        let cutoff = CutoffSpec::smoothstep(0.3, 1.0).unwrap();
        let jumps = path(vec![JumpEvent { time: 0.5, size: 0.1 }]);
        let v = d_delta_one(&jumps, &levy, &cutoff);
        assert!((v - (-0.02)).abs() < 1e-14, "D delta(1) = {v}");
        assert_eq!(d_delta_one(&path(vec![]), &levy, &cutoff), 0.0);
    }

    #[test]
    fn d_delta_one_matches_gateaux() {
        use crate::jumpsim::JumpSampler;
        use crate::model::DriftSpec;
        use crate::varsens::{gateaux_oracle, GateauxTarget};
        let levy = const_levy();
        let cutoff = CutoffSpec::smoothstep(0.5, 1.0).unwrap();
        let sampler = JumpSampler::new(&levy, 0.02).unwrap();
        let drift = DriftSpec::ou();
        for seed in 0..10u64 {
            let jumps = sampler.sample(1.0, crate::numerics::mix_seed(13, seed));
            let oracle =
                gateaux_oracle(&jumps, &drift, 1.0, 0.0, 1e-2, &levy, &cutoff, 1, GateauxTarget::DeltaOne)
                    .unwrap();
            let analytic = d_delta_one(&jumps, &levy, &cutoff);
            assert!((oracle - analytic).abs() < 1e-6 * (1.0 + analytic.abs()), "{oracle} vs {analytic}");
        }
    }

    #[test]
    fn divergence_consistency() {
        assert_eq!(divergence(1.0, 0.0, 0.37), 0.37);
        assert_eq!(divergence(0.0, 0.0, 0.37), 0.0);
    }

    #[test]
    fn xi1_direct_formula() {
        let bundle = VariationalBundle { z1: 1.0, y1: 2.0, ..Default::default() };
        assert_eq!(xi1(&bundle, 3.0), Some(1.5));
    }

    #[test]
    fn xi_undefined_on_degenerate_path() {
        let bundle = VariationalBundle { y1: 0.0, z1: 1.0, ..Default::default() };
        assert_eq!(xi1(&bundle, 1.0), None);
        assert_eq!(xi2(&bundle, 1.0, 0.0), None);
    }

    #[test]
    fn xi_zero_when_drift_theta_free() {
        let bundle = VariationalBundle { y1: 0.5, y2: 0.1, y3: 0.02, ..Default::default() };
        assert_eq!(xi1(&bundle, 0.8), Some(0.0));
        assert_eq!(xi2(&bundle, 0.8, -0.1), Some(0.0));
    }

    #[test]
    fn xi2_synthetic_bundle_frozen_value() {
        // Independently derived by applying delta(G) = delta(1)G - DG twice:
        //   delta_ratio = 0.325, d_delta_ratio = 0.1275, xi2 = 0.219375.
        let bundle = VariationalBundle {
            z1: 1.0,
            z2: 0.5,
            y1: 2.0,
            y2: 0.1,
            y3: 0.0,
            w1: 0.2,
            w2: 0.0,
            v1: 0.3,
            ..Default::default()
        };
        let (dr, ddr, x2) = xi2_parts(&bundle, 1.0, -0.05).unwrap();
        assert!((dr - 0.325).abs() < 1e-15);
        assert!((ddr - 0.1275).abs() < 1e-15);
        assert!((x2 - 0.219375).abs() < 1e-12, "xi2 = {x2}");
    }

    /// Second route: build Ξ² by literally applying divergence() twice,
    /// differentiating each quotient with the product rule on bundle
    /// entries. Structurally independent of the flattened expansion.
    pub(crate) fn xi2_nested_divergence(b: &VariationalBundle, delta1: f64, d_delta1: f64) -> Option<f64> {
        if b.y1 < Y_MIN {
            return None;
        }
        // G = A^2 / B
        let g = b.z1 * b.z1 / b.y1;
        let dg = 2.0 * b.z1 * b.w1 / b.y1 - b.z1 * b.z1 * b.y2 / (b.y1 * b.y1);
        let dr = divergence(g, dg, delta1);
        // D(dr) term by term: D[A^2 d1 / B], D[A^2 Y2 / B^2], D[-2 A W1 / B]
        let d_dr = {
            let t1 = 2.0 * b.z1 * b.w1 * delta1 / b.y1 + b.z1 * b.z1 * d_delta1 / b.y1
                - b.z1 * b.z1 * delta1 * b.y2 / (b.y1 * b.y1);
            let t2 = 2.0 * b.z1 * b.w1 * b.y2 / (b.y1 * b.y1) + b.z1 * b.z1 * b.y3 / (b.y1 * b.y1)
                - 2.0 * b.z1 * b.z1 * b.y2 * b.y2 / (b.y1 * b.y1 * b.y1);
            let t3 = -2.0 * (b.w1 * b.w1 / b.y1 + b.z1 * b.w2 / b.y1 - b.z1 * b.w1 * b.y2 / (b.y1 * b.y1));
            t1 + t2 + t3
        };
        // G2 = (dr + Z2) / B
        let g2 = (dr + b.z2) / b.y1;
        let dg2 = (d_dr + b.v1) / b.y1 - (dr + b.z2) * b.y2 / (b.y1 * b.y1);
        Some(divergence(g2, dg2, delta1))
    }

    #[test]
    fn xi2_two_routes_agree_on_synthetic_bundles() {
        let mut state = 0xD1CE_u64;
        let mut next = || {
            state = crate::numerics::splitmix64(state);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..500 {
            let bundle = VariationalBundle {
                z1: 4.0 * next() - 2.0,
                z2: 4.0 * next() - 2.0,
                y1: 0.05 + 4.0 * next(),
                y2: 2.0 * next() - 1.0,
                y3: 2.0 * next() - 1.0,
                w1: 2.0 * next() - 1.0,
                w2: 2.0 * next() - 1.0,
                v1: 2.0 * next() - 1.0,
                ..Default::default()
            };
            let d1 = 2.0 * next() - 1.0;
            let dd1 = next() - 0.5;
            let direct = xi2(&bundle, d1, dd1).unwrap();
            let nested = xi2_nested_divergence(&bundle, d1, dd1).unwrap();
            assert!(
                (direct - nested).abs() <= 1e-10 * (1.0 + direct.abs()),
                "routes disagree: {direct} vs {nested}"
            );
        }
    }

    #[test]
    fn xi2_two_routes_agree_on_real_paths() {
        use crate::jumpsim::{integrate_path, JumpSampler};
        use crate::model::DriftSpec;
        use crate::varsens::propagate_sensitivities;
        let levy = const_levy();
        let cutoff = CutoffSpec::smoothstep(0.5, 1.0).unwrap();
        let sampler = JumpSampler::new(&levy, 0.02).unwrap();
        let drift = DriftSpec::tanh_drift();
        let mut checked = 0;
        for seed in 0..40u64 {
            let jumps = sampler.sample(1.0, crate::numerics::mix_seed(55, seed));
            let skel = integrate_path(&jumps, &drift, 1.0, 0.3, 2e-3).unwrap();
            let bundle = propagate_sensitivities(&skel, &jumps, &drift, &cutoff).unwrap();
            let w = weights_for_path(&jumps, &bundle, &levy, &cutoff);
            if w.degenerate {
                continue;
            }
            let nested = xi2_nested_divergence(&bundle, w.delta1, w.d_delta1).unwrap();
            let direct = w.xi2.unwrap();
            assert!(
                (direct - nested).abs() <= 1e-10 * (1.0 + direct.abs()),
                "seed {seed}: {direct} vs {nested}"
            );
            checked += 1;
        }
        assert!(checked > 20, "too few non-degenerate paths: {checked}");
    }
}
