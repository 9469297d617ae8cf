//! Small numerical utilities shared across the crate: deterministic seed
//! mixing, order-insensitive pairwise reductions, panel Gauss-Legendre
//! quadrature, an adaptive Dormand-Prince 5(4) step for the cutoff flow, and
//! Richardson-extrapolated central differences.

use crate::error::ModelError;

/// SplitMix64 finalizer. Stable across platforms and releases.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based per-stream seed: stream `i` of a master seed. Used so that
/// parallel and serial runs produce identical ensembles.
pub fn mix_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Pairwise (tree) summation. Associative reduction with a fixed order, so
/// results do not depend on thread count and rounding error stays O(log n).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Mean and standard error of the mean via two pairwise passes.
/// Returns (mean, se); se = 0 for n < 2.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Sample standard deviation (pairwise, two-pass).
pub fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = pairwise_sum(xs) / n as f64;
    let sq: Vec<f64> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
    (pairwise_sum(&sq) / (n as f64 - 1.0)).sqrt()
}

// 16-point Gauss-Legendre nodes/weights on [-1, 1] (positive half; mirrored).
const GL16_X: [f64; 8] = [
    0.0950125098376374,
    0.2816035507792589,
    0.4580167776572274,
    0.6178762444026438,
    0.7554044083550030,
    0.8656312023878318,
    0.9445750230732326,
    0.9894009349916499,
];
const GL16_W: [f64; 8] = [
    0.1894506104550685,
    0.1826034150449236,
    0.1691565193950025,
    0.1495959888165767,
    0.1246289712555339,
    0.0951585116824928,
    0.0622535239386479,
    0.0271524594117541,
];

fn gl16<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let mut acc = 0.0;
    for k in 0..8 {
        let dx = hw * GL16_X[k];
        acc += GL16_W[k] * (f(c - dx) + f(c + dx));
    }
    acc * hw
}

/// Composite 16-point Gauss-Legendre over `panels` equal subintervals.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    let n = panels.max(1);
    let step = (b - a) / n as f64;
    let parts: Vec<f64> = (0..n)
        .map(|i| gl16(&f, a + i as f64 * step, a + (i + 1) as f64 * step))
        .collect();
    pairwise_sum(&parts)
}

/// Composite Gauss-Legendre on geometrically spaced panels of [a, b],
/// 0 < a < b. Suited to integrands with a power-law spike at the origin
/// (stable-like Lévy densities).
pub fn integrate_log<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    assert!(a > 0.0 && b > a, "integrate_log needs 0 < a < b");
    let n = panels.max(1);
    let ratio = (b / a).powf(1.0 / n as f64);
    let mut lo = a;
    let mut parts = Vec::with_capacity(n);
    for i in 0..n {
        let hi = if i + 1 == n { b } else { lo * ratio };
        parts.push(gl16(&f, lo, hi));
        lo = hi;
    }
    pairwise_sum(&parts)
}

// Dormand-Prince 5(4) coefficients.
const DP_C: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 6] = [
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates the scalar autonomous ODE q' = f(q), q(0) = x0, to time `c`
/// (either sign) with an embedded Dormand-Prince 5(4) pair.
///
/// The first trial step spans the whole interval, so for the small |c| used
/// by finite-difference oracles the result is a single polynomial evaluation
/// in c and hence smooth in c.
pub fn solve_flow<F: Fn(f64) -> f64>(f: F, x0: f64, c: f64, tol: f64) -> Result<f64, ModelError> {
    if c == 0.0 {
        return Ok(x0);
    }
    let dir = c.signum();
    let total = c.abs();
    let mut t = 0.0_f64;
    let mut q = x0;
    let mut h = total;
    let h_min = total * 1e-14 + f64::MIN_POSITIVE;
    let mut k = [0.0_f64; 7];
    while t < total {
        if h < h_min {
            return Err(ModelError::FlowStepUnderflow { state: q });
        }
        h = h.min(total - t);
        k[0] = f(q);
        for s in 0..6 {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate().take(s + 1) {
                acc += DP_A[s][j] * kj;
            }
            k[s + 1] = f(q + dir * h * acc);
            let _ = DP_C[s];
        }
        let mut inc5 = 0.0;
        let mut inc4 = 0.0;
        for j in 0..7 {
            inc5 += DP_B5[j] * k[j];
            inc4 += DP_B4[j] * k[j];
        }
        let err = (h * (inc5 - inc4)).abs();
        let scale = tol * (1.0 + q.abs());
        if err <= scale {
            q += dir * h * inc5;
            t += h;
            if !q.is_finite() {
                return Err(ModelError::FlowStepUnderflow { state: q });
            }
            let grow = if err == 0.0 { 4.0 } else { 0.9 * (scale / err).powf(0.2) };
            h *= grow.clamp(0.2, 4.0);
        } else {
            h *= (0.9 * (scale / err).powf(0.2)).clamp(0.1, 0.9);
        }
    }
    Ok(q)
}

/// Central finite-difference stencils for d^order/dc^order at c = 0,
/// order 1..=3, each with leading error O(c^2).
pub fn central_derivative<F: FnMut(f64) -> f64>(f: &mut F, order: u8, c: f64) -> f64 {
    match order {
        1 => (f(c) - f(-c)) / (2.0 * c),
        2 => (f(c) - 2.0 * f(0.0) + f(-c)) / (c * c),
        3 => (f(2.0 * c) - 2.0 * f(c) + 2.0 * f(-c) - f(-2.0 * c)) / (2.0 * c * c * c),
        _ => panic!("central_derivative supports orders 1..=3"),
    }
}

/// Richardson extrapolation of the O(c^2) stencils over steps {c, c/2}.
pub fn central_derivative_richardson<F: FnMut(f64) -> f64>(f: &mut F, order: u8, c: f64) -> f64 {
    let coarse = central_derivative(f, order, c);
    let fine = central_derivative(f, order, 0.5 * c);
    (4.0 * fine - coarse) / 3.0
}
