//! Run configuration: flat structured text with dotted keys and typed
//! values (TOML), one file driving every command. Missing or ill-typed
//! keys are reported by their full dotted path.

use std::path::Path;

use serde::Serialize;

use crate::error::ConfigError;
use crate::likefit::FitOptions;
use crate::mcestim::EnsembleConfig;
use crate::model::{CutoffSpec, DriftSpec, LevyMeasureSpec, Model, TailAtom};

#[derive(Clone, Debug, Serialize)]
pub struct DriftConfig {
    pub name: String,
    /// Fixed rate for the theta-free drift; unused by parametric families.
    pub rate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LevyConfig {
    pub name: String,
    pub u0: f64,
    pub kappa: f64,
    pub s0: f64,
    pub c: f64,
    pub alpha: f64,
    pub tail: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimatorConfig {
    pub fd_step_theta: f64,
    /// 0 selects the Silverman rule.
    pub bandwidth: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub y_count: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitConfig {
    pub theta0: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimConfig {
    pub t: f64,
    pub eps: f64,
    pub h: f64,
    pub n: usize,
    pub seed: u64,
    pub x0: f64,
    pub theta: f64,
}

/// Parsed configuration file; [`RunConfig::build_model`] materializes the
/// registered components.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub drift: DriftConfig,
    pub levy: LevyConfig,
    pub u1: f64,
    pub sim: SimConfig,
    pub estimator: EstimatorConfig,
    pub fit: FitConfig,
    pub output_dir: String,
}

fn lookup<'a>(root: &'a toml::Table, key: &str) -> Option<&'a toml::Value> {
    let mut parts = key.split('.');
    let mut cur = root.get(parts.next()?)?;
    for part in parts {
        cur = cur.get(part)?;
    }
    Some(cur)
}

fn req_f64(root: &toml::Table, key: &str) -> Result<f64, ConfigError> {
    match lookup(root, key) {
        None => Err(ConfigError::MissingKey { key: key.to_string() }),
        Some(v) => as_f64(v).ok_or_else(|| ConfigError::BadValue {
            key: key.to_string(),
            reason: format!("expected a number, got {v}"),
        }),
    }
}

fn as_f64(v: &toml::Value) -> Option<f64> {
    match v {
        toml::Value::Float(f) => Some(*f),
        toml::Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn opt_f64(root: &toml::Table, key: &str, default: f64) -> Result<f64, ConfigError> {
    match lookup(root, key) {
        None => Ok(default),
        Some(v) => as_f64(v).ok_or_else(|| ConfigError::BadValue {
            key: key.to_string(),
            reason: format!("expected a number, got {v}"),
        }),
    }
}

fn req_str(root: &toml::Table, key: &str) -> Result<String, ConfigError> {
    match lookup(root, key) {
        None => Err(ConfigError::MissingKey { key: key.to_string() }),
        Some(toml::Value::String(s)) => Ok(s.clone()),
        Some(v) => Err(ConfigError::BadValue { key: key.to_string(), reason: format!("expected a string, got {v}") }),
    }
}

fn opt_usize(root: &toml::Table, key: &str, default: usize) -> Result<usize, ConfigError> {
    match lookup(root, key) {
        None => Ok(default),
        Some(toml::Value::Integer(i)) if *i >= 0 => Ok(*i as usize),
        Some(v) => Err(ConfigError::BadValue {
            key: key.to_string(),
            reason: format!("expected a nonnegative integer, got {v}"),
        }),
    }
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let root: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;

        let drift = DriftConfig {
            name: req_str(&root, "model.drift.name")?,
            rate: opt_f64(&root, "model.drift.rate", 0.5)?,
        };
        let levy_name = req_str(&root, "model.levy.name")?;
        let mut tail = Vec::new();
        if let Some(v) = lookup(&root, "model.levy.tail") {
            let arr = v.as_array().ok_or_else(|| ConfigError::BadValue {
                key: "model.levy.tail".into(),
                reason: "expected an array of [u, mass] pairs".into(),
            })?;
            for pair in arr {
                let p = pair.as_array().filter(|p| p.len() == 2).ok_or_else(|| ConfigError::BadValue {
                    key: "model.levy.tail".into(),
                    reason: format!("expected [u, mass], got {pair}"),
                })?;
                match (as_f64(&p[0]), as_f64(&p[1])) {
                    (Some(u), Some(m)) => tail.push((u, m)),
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: "model.levy.tail".into(),
                            reason: format!("expected numeric [u, mass], got {pair}"),
                        })
                    }
                }
            }
        }
        let levy = LevyConfig {
            u0: req_f64(&root, "model.levy.u0")?,
            kappa: opt_f64(&root, "model.levy.kappa", 1.0)?,
            s0: opt_f64(&root, "model.levy.s0", 1.0)?,
            c: opt_f64(&root, "model.levy.c", 0.5)?,
            alpha: opt_f64(&root, "model.levy.alpha", 1.0)?,
            name: levy_name,
            tail,
        };
        let u1 = req_f64(&root, "model.cutoff.u1")?;
        let sim = SimConfig {
            t: req_f64(&root, "sim.t")?,
            eps: req_f64(&root, "sim.eps")?,
            h: req_f64(&root, "sim.h")?,
            n: opt_usize(&root, "sim.n", 10_000)?,
            seed: opt_usize(&root, "sim.seed", 1)? as u64,
            x0: opt_f64(&root, "sim.x0", 0.0)?,
            theta: opt_f64(&root, "sim.theta", 1.0)?,
        };
        let estimator = EstimatorConfig {
            fd_step_theta: opt_f64(&root, "estimator.fd_step_theta", 1e-2)?,
            bandwidth: opt_f64(&root, "estimator.bandwidth", 0.0)?,
            y_min: opt_f64(&root, "estimator.y_min", f64::NAN)?,
            y_max: opt_f64(&root, "estimator.y_max", f64::NAN)?,
            y_count: opt_usize(&root, "estimator.y_count", 101)?,
        };
        let fit = FitConfig {
            theta0: opt_f64(&root, "fit.theta0", 1.0)?,
            tol: opt_f64(&root, "fit.tol", 1e-3)?,
            max_iter: opt_usize(&root, "fit.max_iter", 25)?,
            damping: opt_f64(&root, "fit.damping", 1.0)?,
        };
        let output_dir = match lookup(&root, "output.dir") {
            Some(toml::Value::String(s)) => s.clone(),
            Some(v) => {
                return Err(ConfigError::BadValue { key: "output.dir".into(), reason: format!("expected a string, got {v}") })
            }
            None => "out".to_string(),
        };
        Ok(Self { drift, levy, u1, sim, estimator, fit, output_dir })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_str(&text)
    }

    pub fn build_model(&self) -> Result<Model, ConfigError> {
        let drift = match self.drift.name.as_str() {
            "ou-drift" => DriftSpec::ou(),
            "tanh-drift" => DriftSpec::tanh_drift(),
            "theta-free" => DriftSpec::theta_free(self.drift.rate),
            other => {
                return Err(ConfigError::BadValue {
                    key: "model.drift.name".into(),
                    reason: format!("unknown drift '{other}' (ou-drift | tanh-drift | theta-free)"),
                })
            }
        };
        let levy = match self.levy.name.as_str() {
            "constant-sigma" => LevyMeasureSpec::constant_sigma(self.levy.s0, self.levy.u0, 3.0, self.levy.kappa),
            "stable-like" => LevyMeasureSpec::stable_like(self.levy.c, self.levy.alpha, self.levy.u0, self.levy.kappa),
            other => {
                return Err(ConfigError::BadValue {
                    key: "model.levy.name".into(),
                    reason: format!("unknown levy measure '{other}' (constant-sigma | stable-like)"),
                })
            }
        };
        let levy = levy
            .and_then(|l| l.with_tail(self.levy.tail.iter().map(|&(u, mass)| TailAtom { u, mass }).collect()))
            .map_err(|e| ConfigError::BadValue { key: "model.levy".into(), reason: e.to_string() })?;
        let cutoff = CutoffSpec::smoothstep(self.u1, self.levy.u0)
            .map_err(|e| ConfigError::BadValue { key: "model.cutoff.u1".into(), reason: e.to_string() })?;
        Model::new(drift, levy, cutoff).map_err(|e| ConfigError::BadValue { key: "model".into(), reason: e.to_string() })
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            n: self.sim.n,
            t: self.sim.t,
            x0: self.sim.x0,
            theta: self.sim.theta,
            eps: self.sim.eps,
            h: self.sim.h,
            master_seed: self.sim.seed,
            fd_step_theta: self.estimator.fd_step_theta,
            bandwidth_override: if self.estimator.bandwidth > 0.0 { Some(self.estimator.bandwidth) } else { None },
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions { tol: self.fit.tol, max_iter: self.fit.max_iter, damping: self.fit.damping }
    }

    /// Estimator grid; defaults to x0 ± 4 std of a pilot ensemble when the
    /// bounds are unset, which callers resolve themselves.
    pub fn y_grid(&self) -> Option<Vec<f64>> {
        if !(self.estimator.y_min.is_finite() && self.estimator.y_max.is_finite() && self.estimator.y_count >= 2) {
            return None;
        }
        let (lo, hi, m) = (self.estimator.y_min, self.estimator.y_max, self.estimator.y_count);
        Some((0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect())
    }

    /// Hex SHA-256 of the canonical serialized configuration.
    pub fn model_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const OU_TOML: &str = r#"
model.drift.name = "ou-drift"
model.levy.name = "constant-sigma"
model.levy.u0 = 1.0
model.levy.s0 = 1.0
model.cutoff.u1 = 0.5

sim.t = 1.0
sim.eps = 0.01
sim.h = 1e-3
sim.n = 1000
sim.seed = 42
sim.x0 = 1.0
sim.theta = 1.0
"#;

    #[test]
    fn parses_and_builds() {
        let cfg = RunConfig::from_str(OU_TOML).unwrap();
        assert_eq!(cfg.drift.name, "ou-drift");
        assert_eq!(cfg.sim.n, 1000);
        let model = cfg.build_model().unwrap();
        assert_eq!(model.drift.name, "ou-drift");
        assert!(model.validate().all_passed());
    }

    #[test]
    fn missing_key_names_the_dotted_path() {
        let broken = OU_TOML.replace("model.levy.u0 = 1.0\n", "");
        let err = RunConfig::from_str(&broken).unwrap_err();
        assert_eq!(err.to_string(), "model.levy.u0 missing");
    }

    #[test]
    fn bad_type_reports_key() {
        let broken = OU_TOML.replace("sim.t = 1.0", "sim.t = \"soon\"");
        let err = RunConfig::from_str(&broken).unwrap_err();
        assert!(err.to_string().starts_with("sim.t:"), "{err}");
    }

    #[test]
    fn tail_atoms_parse() {
        let with_tail = format!("{OU_TOML}\nmodel.levy.tail = [[2.0, 0.5], [-3.0, 0.25]]\n");
        let cfg = RunConfig::from_str(&with_tail).unwrap();
        assert_eq!(cfg.levy.tail, vec![(2.0, 0.5), (-3.0, 0.25)]);
        let model = cfg.build_model().unwrap();
        assert_eq!(model.levy.tail.len(), 2);
    }

    #[test]
    fn model_hash_stable_and_sensitive() {
        let a = RunConfig::from_str(OU_TOML).unwrap();
        let b = RunConfig::from_str(OU_TOML).unwrap();
        assert_eq!(a.model_hash(), b.model_hash());
        let c = RunConfig::from_str(&OU_TOML.replace("sim.seed = 42", "sim.seed = 43")).unwrap();
        assert_ne!(a.model_hash(), c.model_hash());
    }
}
