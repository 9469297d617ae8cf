//! Statistical model specification: the drift family a_θ(x) with the
//! derivative orders the sensitivity cascade consumes, the Lévy measure
//! (smooth density σ on [-u0, u0] plus a finite atomic tail), the C² cutoff
//! ρ that localizes the jump-size perturbation, and the derived objects
//!
//!     χ(u) = -(σ(u)ρ(u))' / σ(u),      Q_c(x): q' = ρ(q), q(0) = x.
//!
//! All specs are immutable after construction and their callables must be
//! pure; they are shared across worker threads without synchronization.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::ModelError;
use crate::numerics::{integrate_log, solve_flow};

/// Flow integrator tolerance. Tight enough that flow values behave as smooth
/// closed-form expressions inside finite-difference oracles.
const FLOW_TOL: f64 = 1e-13;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type DriftFn = Arc<dyn Fn(DriftOrder, f64, f64) -> f64 + Send + Sync>;

/// Derivative orders of a_θ(x) used by the estimator. Exactly these ten are
/// supported; asking for anything else is an error, never a silent zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DriftOrder {
    /// a
    Value,
    /// ∂x a
    X,
    /// ∂θ a
    Theta,
    /// ∂²xx a
    Xx,
    /// ∂²xθ a
    XTheta,
    /// ∂²θθ a
    ThetaTheta,
    /// ∂³xxx a
    Xxx,
    /// ∂³xxθ a
    XxTheta,
    /// ∂³xθθ a
    XThetaTheta,
    /// ∂⁴xxxθ a
    XxxTheta,
}

impl DriftOrder {
    pub const ALL: [DriftOrder; 10] = [
        DriftOrder::Value,
        DriftOrder::X,
        DriftOrder::Theta,
        DriftOrder::Xx,
        DriftOrder::XTheta,
        DriftOrder::ThetaTheta,
        DriftOrder::Xxx,
        DriftOrder::XxTheta,
        DriftOrder::XThetaTheta,
        DriftOrder::XxxTheta,
    ];

    /// Maps raw (order_x, order_theta) pairs onto the supported set.
    pub fn from_orders(order_x: u8, order_theta: u8) -> Result<Self, ModelError> {
        match (order_x, order_theta) {
            (0, 0) => Ok(DriftOrder::Value),
            (1, 0) => Ok(DriftOrder::X),
            (0, 1) => Ok(DriftOrder::Theta),
            (2, 0) => Ok(DriftOrder::Xx),
            (1, 1) => Ok(DriftOrder::XTheta),
            (0, 2) => Ok(DriftOrder::ThetaTheta),
            (3, 0) => Ok(DriftOrder::Xxx),
            (2, 1) => Ok(DriftOrder::XxTheta),
            (1, 2) => Ok(DriftOrder::XThetaTheta),
            (3, 1) => Ok(DriftOrder::XxxTheta),
            _ => Err(ModelError::UnsupportedDriftOrder { order_x, order_theta }),
        }
    }

    pub fn orders(self) -> (u8, u8) {
        match self {
            DriftOrder::Value => (0, 0),
            DriftOrder::X => (1, 0),
            DriftOrder::Theta => (0, 1),
            DriftOrder::Xx => (2, 0),
            DriftOrder::XTheta => (1, 1),
            DriftOrder::ThetaTheta => (0, 2),
            DriftOrder::Xxx => (3, 0),
            DriftOrder::XxTheta => (2, 1),
            DriftOrder::XThetaTheta => (1, 2),
            DriftOrder::XxxTheta => (3, 1),
        }
    }
}

impl fmt::Display for DriftOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (ox, ot) = self.orders();
        write!(f, "d^{ox}_x d^{ot}_theta a")
    }
}

/// Parametric drift family with analytically supplied derivatives.
#[derive(Clone)]
pub struct DriftSpec {
    eval: DriftFn,
    /// C such that |a| + |∂θ a| + |∂²θθ a| <= C(1 + |x|).
    pub growth_constant: f64,
    /// Closed parameter interval Θ.
    pub theta_domain: (f64, f64),
    pub name: String,
}

impl fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftSpec")
            .field("name", &self.name)
            .field("growth_constant", &self.growth_constant)
            .field("theta_domain", &self.theta_domain)
            .finish()
    }
}

impl DriftSpec {
    pub fn new(
        name: impl Into<String>,
        growth_constant: f64,
        theta_domain: (f64, f64),
        eval: impl Fn(DriftOrder, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self, ModelError> {
        if !(growth_constant.is_finite() && growth_constant > 0.0) {
            return Err(ModelError::InvalidSpec {
                name: "drift",
                reason: format!("growth_constant must be positive and finite, got {growth_constant}"),
            });
        }
        if !(theta_domain.0.is_finite() && theta_domain.1.is_finite() && theta_domain.0 <= theta_domain.1) {
            return Err(ModelError::InvalidSpec {
                name: "drift",
                reason: format!("theta_domain [{}, {}] is not a closed interval", theta_domain.0, theta_domain.1),
            });
        }
        Ok(Self { eval: Arc::new(eval), growth_constant, theta_domain, name: name.into() })
    }

    /// ∂^{order} a at (θ, x).
    #[inline]
    pub fn eval(&self, order: DriftOrder, theta: f64, x: f64) -> f64 {
        (self.eval)(order, theta, x)
    }

    /// Raw-order entry point; unsupported pairs error out.
    pub fn eval_orders(&self, order_x: u8, order_theta: u8, theta: f64, x: f64) -> Result<f64, ModelError> {
        Ok(self.eval(DriftOrder::from_orders(order_x, order_theta)?, theta, x))
    }

    /// Mean-reverting linear drift a_θ(x) = -θ x.
    pub fn ou() -> Self {
        Self::new("ou-drift", 11.0, (1e-3, 10.0), |order, theta, x| match order {
            DriftOrder::Value => -theta * x,
            DriftOrder::X => -theta,
            DriftOrder::Theta => -x,
            DriftOrder::XTheta => -1.0,
            _ => 0.0,
        })
        .expect("built-in drift")
    }

    /// Bounded-response drift a_θ(x) = -θ tanh(x).
    pub fn tanh_drift() -> Self {
        Self::new("tanh-drift", 11.0, (1e-3, 10.0), |order, theta, x| {
            let t = x.tanh();
            let s2 = 1.0 - t * t;
            match order {
                DriftOrder::Value => -theta * t,
                DriftOrder::X => -theta * s2,
                DriftOrder::Theta => -t,
                DriftOrder::Xx => 2.0 * theta * s2 * t,
                DriftOrder::XTheta => -s2,
                DriftOrder::ThetaTheta => 0.0,
                DriftOrder::Xxx => 2.0 * theta * s2 * (s2 - 2.0 * t * t),
                DriftOrder::XxTheta => 2.0 * s2 * t,
                DriftOrder::XThetaTheta => 0.0,
                DriftOrder::XxxTheta => 2.0 * s2 * (s2 - 2.0 * t * t),
            }
        })
        .expect("built-in drift")
    }

    /// θ-free drift a(x) = -r x; every θ-derivative vanishes. Used to
    /// exercise the unidentifiable-model paths.
    pub fn theta_free(rate: f64) -> Self {
        Self::new("theta-free", (rate.abs() + 1.0) * 1.5, (1e-3, 10.0), move |order, _theta, x| {
            match order {
                DriftOrder::Value => -rate * x,
                DriftOrder::X => -rate,
                _ => 0.0,
            }
        })
        .expect("built-in drift")
    }
}

/// Atom of the finite tail component of the Lévy measure, |u| > u0.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TailAtom {
    pub u: f64,
    pub mass: f64,
}

/// Lévy measure: positive C² density σ on [-u0, 0) ∪ (0, u0] plus a finite
/// list of atoms beyond u0.
#[derive(Clone)]
pub struct LevyMeasureSpec {
    pub u0: f64,
    /// Constant of the derivative-domination hypothesis
    /// |σ'(u)| <= C0 |u|⁻¹ σ(u), |σ''(u)| <= C0 u⁻² σ(u).
    pub c0: f64,
    /// Moment exponent: ∫_{|u|>=1} u^{2+κ} μ(du) < ∞.
    pub kappa: f64,
    pub symmetric: bool,
    pub tail: Vec<TailAtom>,
    pub name: String,
    sigma: ScalarFn,
    sigma_prime: ScalarFn,
    sigma_second: ScalarFn,
}

impl fmt::Debug for LevyMeasureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevyMeasureSpec")
            .field("name", &self.name)
            .field("u0", &self.u0)
            .field("c0", &self.c0)
            .field("kappa", &self.kappa)
            .field("symmetric", &self.symmetric)
            .field("tail_atoms", &self.tail.len())
            .finish()
    }
}

impl LevyMeasureSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        u0: f64,
        c0: f64,
        kappa: f64,
        symmetric: bool,
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma_second: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self, ModelError> {
        if !(u0.is_finite() && u0 > 0.0) {
            return Err(ModelError::InvalidSpec { name: "levy", reason: format!("u0 must be > 0, got {u0}") });
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(ModelError::InvalidSpec { name: "levy", reason: format!("kappa must be > 0, got {kappa}") });
        }
        if !c0.is_finite() || c0 <= 0.0 {
            return Err(ModelError::InvalidSpec { name: "levy", reason: format!("C0 must be > 0, got {c0}") });
        }
        Ok(Self {
            u0,
            c0,
            kappa,
            symmetric,
            tail: Vec::new(),
            name: name.into(),
            sigma: Arc::new(sigma),
            sigma_prime: Arc::new(sigma_prime),
            sigma_second: Arc::new(sigma_second),
        })
    }

    pub fn with_tail(mut self, atoms: Vec<TailAtom>) -> Result<Self, ModelError> {
        for a in &atoms {
            if a.u.abs() <= self.u0 {
                return Err(ModelError::InvalidSpec {
                    name: "levy",
                    reason: format!("tail atom at u = {} lies inside [-u0, u0]", a.u),
                });
            }
            if !(a.mass.is_finite() && a.mass > 0.0) {
                return Err(ModelError::InvalidSpec {
                    name: "levy",
                    reason: format!("tail atom mass {} must be positive", a.mass),
                });
            }
        }
        if !atoms.is_empty() {
            self.symmetric = false;
        }
        self.tail = atoms;
        Ok(self)
    }

    #[inline]
    pub fn sigma(&self, u: f64) -> f64 {
        (self.sigma)(u)
    }

    #[inline]
    pub fn sigma_prime(&self, u: f64) -> f64 {
        (self.sigma_prime)(u)
    }

    #[inline]
    pub fn sigma_second(&self, u: f64) -> f64 {
        (self.sigma_second)(u)
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail.iter().map(|a| a.mass).sum()
    }

    /// σ ≡ s0 on [-u0, u0].
    pub fn constant_sigma(s0: f64, u0: f64, c0: f64, kappa: f64) -> Result<Self, ModelError> {
        if !(s0.is_finite() && s0 > 0.0) {
            return Err(ModelError::InvalidSpec { name: "levy", reason: format!("s0 must be > 0, got {s0}") });
        }
        Self::new("constant-sigma", u0, c0, kappa, true, move |_| s0, |_| 0.0, |_| 0.0)
    }

    /// σ(u) = c |u|^{-1-α}, α in (0, 2). Infinite activity at the origin.
    pub fn stable_like(c: f64, alpha: f64, u0: f64, kappa: f64) -> Result<Self, ModelError> {
        if !(c.is_finite() && c > 0.0) {
            return Err(ModelError::InvalidSpec { name: "levy", reason: format!("c must be > 0, got {c}") });
        }
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(ModelError::InvalidSpec { name: "levy", reason: format!("alpha must lie in (0,2), got {alpha}") });
        }
        // |σ'| = (1+α)/|u| σ and |σ''| = (1+α)(2+α)/u² σ
        let c0 = (1.0 + alpha) * (2.0 + alpha) + 1.0;
        Self::new(
            "stable-like",
            u0,
            c0,
            kappa,
            true,
            move |u| c * u.abs().powf(-1.0 - alpha),
            move |u| -c * (1.0 + alpha) * u.signum() * u.abs().powf(-2.0 - alpha),
            move |u| c * (1.0 + alpha) * (2.0 + alpha) * u.abs().powf(-3.0 - alpha),
        )
    }
}

/// C² cutoff: ρ(u) = u² for |u| <= u1, ρ = 0 for |u| >= u0, ρ >= 0, ρ'
/// bounded. The default taper blends with the quintic smoothstep
/// S(r) = 6r⁵ - 15r⁴ + 10r³ so ρ, ρ', ρ'' are continuous at ±u1 and ±u0.
#[derive(Clone)]
pub struct CutoffSpec {
    pub u1: f64,
    pub u0: f64,
    rho: ScalarFn,
    rho_prime: ScalarFn,
    rho_second: ScalarFn,
}

impl fmt::Debug for CutoffSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CutoffSpec").field("u1", &self.u1).field("u0", &self.u0).finish()
    }
}

impl CutoffSpec {
    pub fn smoothstep(u1: f64, u0: f64) -> Result<Self, ModelError> {
        if !(u1 > 0.0 && u1 < u0 && u0.is_finite()) {
            return Err(ModelError::InvalidSpec {
                name: "cutoff",
                reason: format!("need 0 < u1 < u0, got u1 = {u1}, u0 = {u0}"),
            });
        }
        let w = u0 - u1;
        let rho = move |u: f64| {
            let r = (u.abs() - u1) / w;
            if r <= 0.0 {
                u * u
            } else if r >= 1.0 {
                0.0
            } else {
                let s = r * r * r * (10.0 + r * (-15.0 + 6.0 * r));
                u * u * (1.0 - s)
            }
        };
        let rho_prime = move |u: f64| {
            let r = (u.abs() - u1) / w;
            if r <= 0.0 {
                2.0 * u
            } else if r >= 1.0 {
                0.0
            } else {
                let s = r * r * r * (10.0 + r * (-15.0 + 6.0 * r));
                let ds = 30.0 * r * r * (r - 1.0) * (r - 1.0);
                2.0 * u * (1.0 - s) - u.signum() * u * u * ds / w
            }
        };
        let rho_second = move |u: f64| {
            let r = (u.abs() - u1) / w;
            if r <= 0.0 {
                2.0
            } else if r >= 1.0 {
                0.0
            } else {
                let s = r * r * r * (10.0 + r * (-15.0 + 6.0 * r));
                let ds = 30.0 * r * r * (r - 1.0) * (r - 1.0);
                let d2s = 60.0 * r * (2.0 * r - 1.0) * (r - 1.0);
                2.0 * (1.0 - s) - 4.0 * u.abs() * ds / w - u * u * d2s / (w * w)
            }
        };
        Ok(Self {
            u1,
            u0,
            rho: Arc::new(rho),
            rho_prime: Arc::new(rho_prime),
            rho_second: Arc::new(rho_second),
        })
    }

    /// Custom cutoff callables, for validation tests of broken specs.
    pub fn custom(
        u1: f64,
        u0: f64,
        rho: impl Fn(f64) -> f64 + Send + Sync + 'static,
        rho_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
        rho_second: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { u1, u0, rho: Arc::new(rho), rho_prime: Arc::new(rho_prime), rho_second: Arc::new(rho_second) }
    }

    #[inline]
    pub fn rho(&self, u: f64) -> f64 {
        (self.rho)(u)
    }

    #[inline]
    pub fn rho_prime(&self, u: f64) -> f64 {
        (self.rho_prime)(u)
    }

    #[inline]
    pub fn rho_second(&self, u: f64) -> f64 {
        (self.rho_second)(u)
    }
}

/// Complete model: drift family, Lévy measure, cutoff.
#[derive(Clone, Debug)]
pub struct Model {
    pub drift: DriftSpec,
    pub levy: LevyMeasureSpec,
    pub cutoff: CutoffSpec,
}

impl Model {
    pub fn new(drift: DriftSpec, levy: LevyMeasureSpec, cutoff: CutoffSpec) -> Result<Self, ModelError> {
        if (cutoff.u0 - levy.u0).abs() > 1e-12 * levy.u0 {
            return Err(ModelError::InvalidSpec {
                name: "model",
                reason: format!("cutoff support radius {} does not match levy u0 = {}", cutoff.u0, levy.u0),
            });
        }
        Ok(Self { drift, levy, cutoff })
    }

    pub fn validate(&self) -> ValidationReport {
        validate_model(&self.drift, &self.levy, &self.cutoff)
    }
}

/// χ(u) = -(σ(u)ρ(u))'/σ(u) = -(σ'(u)/σ(u))ρ(u) - ρ'(u) for |u| <= u0, and
/// 0 beyond the cutoff support. Undefined at u = 0.
pub fn chi(u: f64, levy: &LevyMeasureSpec, cutoff: &CutoffSpec) -> Result<f64, ModelError> {
    if u == 0.0 {
        return Err(ModelError::ChiAtZero);
    }
    if u.abs() > levy.u0 {
        return Ok(0.0);
    }
    Ok(-(levy.sigma_prime(u) / levy.sigma(u)) * cutoff.rho(u) - cutoff.rho_prime(u))
}

/// χ'(u), analytic from σ, σ', σ'' and ρ, ρ', ρ''.
pub fn chi_prime(u: f64, levy: &LevyMeasureSpec, cutoff: &CutoffSpec) -> Result<f64, ModelError> {
    if u == 0.0 {
        return Err(ModelError::ChiAtZero);
    }
    if u.abs() > levy.u0 {
        return Ok(0.0);
    }
    let s = levy.sigma(u);
    let s1 = levy.sigma_prime(u);
    let s2 = levy.sigma_second(u);
    let ratio = s1 / s;
    Ok(-(s2 / s - ratio * ratio) * cutoff.rho(u) - ratio * cutoff.rho_prime(u) - cutoff.rho_second(u))
}

/// Value at time c of the solution to q' = ρ(q), q(0) = x. {Q_c} is a group
/// of transformations of the line with ∂c Q_c(x)|_{c=0} = ρ(x).
pub fn flow_q(c: f64, x: f64, cutoff: &CutoffSpec) -> Result<f64, ModelError> {
    solve_flow(|q| cutoff.rho(q), x, c, FLOW_TOL)
}

/// One hypothesis check with an optional witness point on failure.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Point at which the check failed, when one exists.
    pub witness: Option<f64>,
    pub detail: String,
    /// Informational entries never affect the overall verdict.
    pub informational: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.informational || c.passed)
    }

    pub fn failed(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.informational && !c.passed).collect()
    }
}

fn push(checks: &mut Vec<CheckResult>, name: &str, passed: bool, witness: Option<f64>, detail: String) {
    checks.push(CheckResult { name: name.to_string(), passed, witness, detail, informational: false });
}

/// Validates the model hypotheses on sampled grids:
///
/// - moment condition of the tail (value of ∫_{|u|>=1} u^{2+κ} μ(du)),
/// - positivity of σ on the support,
/// - derivative domination |σ'| <= C0|u|⁻¹σ, |σ''| <= C0 u⁻²σ,
/// - the infinite-activity divergence rate (informational only),
/// - availability plus finite-difference consistency of the ten drift
///   derivative orders,
/// - linear growth of |a| + |∂θ a| + |∂²θθ a|,
/// - the cutoff identity, support, sign, bounded slope, and C² matching at
///   ±u1 and ±u0 via one-sided differences.
///
/// Failures are report entries with witness points; nothing panics. Callers
/// decide whether to proceed.
pub fn validate_model(drift: &DriftSpec, levy: &LevyMeasureSpec, cutoff: &CutoffSpec) -> ValidationReport {
    let mut checks = Vec::new();
    let u0 = levy.u0;

    // H(i): tail moment. The density part contributes on [1, u0] when u0 > 1.
    {
        let mut moment = levy.tail.iter().map(|a| a.u.abs().powf(2.0 + levy.kappa) * a.mass).sum::<f64>();
        if u0 > 1.0 {
            let f = |u: f64| u.powf(2.0 + levy.kappa) * (levy.sigma(u) + levy.sigma(-u));
            moment += integrate_log(f, 1.0, u0, 64);
        }
        push(
            &mut checks,
            "H(i) tail moment",
            moment.is_finite(),
            None,
            format!("int_{{|u|>=1}} |u|^(2+kappa) mu(du) = {moment:.6e} (kappa = {})", levy.kappa),
        );
    }

    // H(ii): σ positive and finite on a two-sided geometric grid.
    {
        let mut witness = None;
        for &sign in &[1.0, -1.0] {
            for i in 0..400 {
                let u = sign * u0 * 10f64.powf(-6.0 * (1.0 - i as f64 / 399.0));
                let s = levy.sigma(u);
                if !(s.is_finite() && s > 0.0) {
                    witness = Some(u);
                    break;
                }
            }
        }
        push(
            &mut checks,
            "H(ii) sigma positive density",
            witness.is_none(),
            witness,
            match witness {
                Some(u) => format!("sigma({u:.6e}) is not a positive finite value"),
                None => "sigma > 0 on sampled grid".to_string(),
            },
        );
    }

    // H(iii): derivative domination with a small floating-point allowance.
    {
        let mut witness = None;
        let mut detail = String::from("|sigma'| <= C0 |u|^-1 sigma and |sigma''| <= C0 u^-2 sigma on sampled grid");
        'outer: for &sign in &[1.0, -1.0] {
            for i in 0..400 {
                let u = sign * u0 * 10f64.powf(-6.0 * (1.0 - i as f64 / 399.0));
                let s = levy.sigma(u);
                let bound1 = levy.c0 / u.abs() * s * (1.0 + 1e-12);
                let bound2 = levy.c0 / (u * u) * s * (1.0 + 1e-12);
                if levy.sigma_prime(u).abs() > bound1 || levy.sigma_second(u).abs() > bound2 {
                    witness = Some(u);
                    detail = format!(
                        "violated at u = {u:.6e}: |sigma'| = {:.4e} (bound {:.4e}), |sigma''| = {:.4e} (bound {:.4e})",
                        levy.sigma_prime(u).abs(),
                        bound1,
                        levy.sigma_second(u).abs(),
                        bound2
                    );
                    break 'outer;
                }
            }
        }
        push(&mut checks, "H(iii) derivative domination", witness.is_none(), witness, detail);
    }

    // Finite mass above every truncation level (checked at a few levels).
    {
        let mut witness = None;
        for &eps in &[u0 * 1e-6, u0 * 1e-3, u0 * 0.1] {
            let lam = integrate_log(|u| levy.sigma(u) + levy.sigma(-u), eps, u0, 64) + levy.tail_mass();
            if !lam.is_finite() {
                witness = Some(eps);
                break;
            }
        }
        push(
            &mut checks,
            "finite activity above truncation",
            witness.is_none(),
            witness,
            "mu({|u| >= eps}) finite for sampled eps".to_string(),
        );
    }

    // H(iv), informational: (log 1/eps)^-1 mu(|u| >= eps) should diverge.
    {
        let rates: Vec<f64> = [1e-2, 1e-4, 1e-6]
            .iter()
            .map(|&eps| {
                let lam =
                    integrate_log(|u| levy.sigma(u) + levy.sigma(-u), eps * u0, u0, 96) + levy.tail_mass();
                lam / (1.0 / (eps * u0)).ln()
            })
            .collect();
        let increasing = rates.windows(2).all(|w| w[1] > w[0] * 1.5);
        checks.push(CheckResult {
            name: "H(iv) infinite activity rate".to_string(),
            passed: increasing,
            witness: None,
            detail: format!(
                "(log 1/eps)^-1 mu(|u|>=eps) at eps*u0 in {{1e-2,1e-4,1e-6}}: {:.4e}, {:.4e}, {:.4e}{}",
                rates[0],
                rates[1],
                rates[2],
                if increasing { "" } else { " (not diverging; compound-Poisson regime)" }
            ),
            informational: true,
        });
    }

    // Theorem-level drift requirements: all ten orders evaluable and finite.
    {
        let theta_mid = 0.5 * (drift.theta_domain.0 + drift.theta_domain.1);
        let mut witness = None;
        let mut detail = String::from("all ten derivative orders evaluate to finite values");
        'avail: for order in DriftOrder::ALL {
            for &x in &[-2.0, -0.5, 0.0, 0.7, 3.0] {
                let v = drift.eval(order, theta_mid, x);
                if !v.is_finite() {
                    witness = Some(x);
                    detail = format!("{order} not finite at (theta = {theta_mid}, x = {x})");
                    break 'avail;
                }
            }
        }
        push(&mut checks, "drift derivative availability", witness.is_none(), witness, detail);
    }

    // Finite-difference consistency: each supplied derivative against a
    // central difference of the one-lower order, mixed tolerance 1e-5.
    {
        let pairs: [(DriftOrder, DriftOrder, bool); 9] = [
            (DriftOrder::X, DriftOrder::Value, true),
            (DriftOrder::Theta, DriftOrder::Value, false),
            (DriftOrder::Xx, DriftOrder::X, true),
            (DriftOrder::XTheta, DriftOrder::X, false),
            (DriftOrder::ThetaTheta, DriftOrder::Theta, false),
            (DriftOrder::Xxx, DriftOrder::Xx, true),
            (DriftOrder::XxTheta, DriftOrder::Xx, false),
            (DriftOrder::XThetaTheta, DriftOrder::XTheta, false),
            (DriftOrder::XxxTheta, DriftOrder::Xxx, false),
        ];
        let mut rng_state = 0x5EED_u64;
        let mut witness = None;
        let mut detail = String::from("all supplied derivatives match central differences (mixed tol 1e-5)");
        'fd: for (high, low, in_x) in pairs {
            for _ in 0..24 {
                rng_state = crate::numerics::splitmix64(rng_state);
                let fx = (rng_state >> 11) as f64 / (1u64 << 53) as f64;
                rng_state = crate::numerics::splitmix64(rng_state);
                let ft = (rng_state >> 11) as f64 / (1u64 << 53) as f64;
                let x = -3.0 + 6.0 * fx;
                let span = drift.theta_domain.1 - drift.theta_domain.0;
                let margin = (0.05 * span).min(1e-3);
                let theta = drift.theta_domain.0 + margin + (span - 2.0 * margin) * ft;
                let step = 1e-4;
                let fd = if in_x {
                    let f = |xx: f64| drift.eval(low, theta, xx);
                    let d1 = (f(x + step) - f(x - step)) / (2.0 * step);
                    let d2 = (f(x + 0.5 * step) - f(x - 0.5 * step)) / step;
                    (4.0 * d2 - d1) / 3.0
                } else {
                    let f = |tt: f64| drift.eval(low, tt, x);
                    let d1 = (f(theta + step) - f(theta - step)) / (2.0 * step);
                    let d2 = (f(theta + 0.5 * step) - f(theta - 0.5 * step)) / step;
                    (4.0 * d2 - d1) / 3.0
                };
                let supplied = drift.eval(high, theta, x);
                if (supplied - fd).abs() > 1e-5 * (1.0 + supplied.abs()) {
                    witness = Some(x);
                    detail = format!(
                        "{high} at (theta = {theta:.4}, x = {x:.4}): supplied {supplied:.8e}, finite difference {fd:.8e}"
                    );
                    break 'fd;
                }
            }
        }
        push(&mut checks, "drift finite-difference cross-check", witness.is_none(), witness, detail);
    }

    // Linear growth on a grid over Θ × [-20, 20].
    {
        let mut witness = None;
        let mut detail = format!("|a| + |d_theta a| + |d2_theta a| <= {} (1 + |x|) on grid", drift.growth_constant);
        let thetas = [drift.theta_domain.0, 0.5 * (drift.theta_domain.0 + drift.theta_domain.1), drift.theta_domain.1];
        'growth: for &theta in &thetas {
            for i in 0..=80 {
                let x = -20.0 + 0.5 * i as f64;
                let total = drift.eval(DriftOrder::Value, theta, x).abs()
                    + drift.eval(DriftOrder::Theta, theta, x).abs()
                    + drift.eval(DriftOrder::ThetaTheta, theta, x).abs();
                if total > drift.growth_constant * (1.0 + x.abs()) {
                    witness = Some(x);
                    detail = format!(
                        "violated at (theta = {theta}, x = {x}): {total:.4e} > {:.4e}",
                        drift.growth_constant * (1.0 + x.abs())
                    );
                    break 'growth;
                }
            }
        }
        push(&mut checks, "drift linear growth", witness.is_none(), witness, detail);
    }

    // Cutoff: identity inside u1, vanishing beyond u0, nonnegativity,
    // bounded slope.
    {
        let mut witness = None;
        let mut detail = String::from("rho = u^2 on |u| <= u1, rho = 0 beyond u0, rho >= 0, rho' bounded");
        for i in 0..=600 {
            let u = -1.5 * u0 + 3.0 * u0 * i as f64 / 600.0;
            let r = cutoff.rho(u);
            let ok = if u.abs() <= cutoff.u1 {
                (r - u * u).abs() <= 1e-12 * (1.0 + u * u)
            } else if u.abs() >= u0 {
                r == 0.0
            } else {
                r >= 0.0
            };
            if !ok || !cutoff.rho_prime(u).is_finite() {
                witness = Some(u);
                detail = format!("cutoff invariant violated at u = {u:.6}: rho = {r:.6e}");
                break;
            }
        }
        push(&mut checks, "cutoff shape", witness.is_none(), witness, detail);
    }

    // Cutoff C² matching at the seam points by one-sided differences.
    {
        let mut witness = None;
        let mut detail = String::from("rho, rho', rho'' continuous at +/-u1 and +/-u0");
        let seams = [cutoff.u1, -cutoff.u1, u0, -u0];
        'seams: for &b in &seams {
            let scale = 1.0 + b * b;
            for (name, f, tol) in [
                ("rho", &(|u: f64| cutoff.rho(u)) as &dyn Fn(f64) -> f64, 1e-6 * scale),
                ("rho'", &|u: f64| cutoff.rho_prime(u), 1e-5 * scale),
                ("rho''", &|u: f64| cutoff.rho_second(u), 1e-3 * scale),
            ] {
                // one-sided limits by Richardson over shrinking offsets
                let lim = |side: f64| {
                    let f1 = f(b + side * 1e-4);
                    let f2 = f(b + side * 5e-5);
                    2.0 * f2 - f1
                };
                let gap = (lim(1.0) - lim(-1.0)).abs();
                if gap > tol {
                    witness = Some(b);
                    detail = format!("{name} jumps by {gap:.4e} at u = {b}");
                    break 'seams;
                }
            }
        }
        push(&mut checks, "cutoff C2 seams", witness.is_none(), witness, detail);
    }

    ValidationReport { checks }
}
