//! End-to-end checks of the command-line interface: exit codes, artifact
//! layout, machine-parsable errors, and reproducibility of artifacts.

use std::path::Path;
use std::process::{Command, Output};

const OU_CONFIG: &str = r#"
model.drift.name = "ou-drift"
model.levy.name = "constant-sigma"
model.levy.u0 = 1.0
model.levy.s0 = 1.0
model.cutoff.u1 = 0.5

sim.t = 1.0
sim.eps = 0.01
sim.h = 2e-3
sim.n = 40
sim.seed = 42
sim.x0 = 1.0
sim.theta = 1.0

estimator.y_min = -2.0
estimator.y_max = 2.0
estimator.y_count = 41

fit.theta0 = 0.7
fit.tol = 0.5
fit.max_iter = 8
"#;

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levysde"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn validate_ok_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), OU_CONFIG);
    let out = run(&["validate", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/validate/report.json")).unwrap())
            .unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    for c in checks {
        if !c["informational"].as_bool().unwrap() {
            assert_eq!(c["passed"], true, "check failed: {c}");
        }
    }
    assert!(dir.path().join("out/validate/manifest.json").exists());
}

#[test]
fn missing_key_exits_2_with_dotted_path() {
    let dir = tempfile::tempdir().unwrap();
    let broken = OU_CONFIG.replace("model.levy.u0 = 1.0\n", "");
    let cfg = write_config(dir.path(), &broken);
    let out = run(&["validate", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error: config: model.levy.u0 missing"), "stderr: {stderr}");
}

#[test]
fn unreadable_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "no-such-file.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_blowup_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // theta-free drift with an explosive rate: Euler state overflows
    let cfg_body = OU_CONFIG
        .replace("model.drift.name = \"ou-drift\"", "model.drift.name = \"theta-free\"\nmodel.drift.rate = -4000.0")
        .replace("sim.n = 40", "sim.n = 2");
    let cfg = write_config(dir.path(), &cfg_body);
    let out = run(&["simulate", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error: numerical:"), "stderr: {stderr}");
}

#[test]
fn simulate_artifacts_reproduce_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), OU_CONFIG);
    let out = run(&["simulate", cfg.to_str().unwrap(), "--out-dir", "a"], dir.path());
    assert!(out.status.success());
    let out = run(&["simulate", cfg.to_str().unwrap(), "--out-dir", "b"], dir.path());
    assert!(out.status.success());
    let a = std::fs::read(dir.path().join("a/simulate/paths.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/simulate/paths.csv")).unwrap();
    assert_eq!(a, b, "paths.csv must be byte-identical across reruns");
    let header = String::from_utf8_lossy(&a);
    assert!(header.starts_with("path_id,t,x,is_jump,u"));
}

#[test]
fn overrides_change_the_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), OU_CONFIG);
    let out = run(&["simulate", cfg.to_str().unwrap(), "--n-paths", "3", "--seed", "7"], dir.path());
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/simulate/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["n_paths"], 3);
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn weights_csv_headers_and_degenerate_blanks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), OU_CONFIG);
    let out = run(&["weights", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let bundle = std::fs::read_to_string(dir.path().join("out/weights/bundle.csv")).unwrap();
    assert!(bundle.starts_with("path_id,Et,Z1,Z2,Y1,Y2,Y3,W1,W2,V1"));
    let weights = std::fs::read_to_string(dir.path().join("out/weights/weights.csv")).unwrap();
    assert!(weights.starts_with("path_id,delta1,d_delta1,xi1,xi2,degenerate"));
    // some path in 40 draws has no jump: its xi fields are empty
    assert!(weights.lines().any(|l| l.ends_with(",1") && l.contains(",,")), "expected a degenerate row");
}

#[test]
fn check_identities_gate() {
    let dir = tempfile::tempdir().unwrap();
    let body = OU_CONFIG.replace("sim.n = 40", "sim.n = 8000");
    let cfg = write_config(dir.path(), &body);
    let out = run(&["check-identities", cfg.to_str().unwrap(), "--gate"], dir.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/check-identities/identities.json")).unwrap(),
    )
    .unwrap();
    assert!(summary["max_abs_z"].as_f64().unwrap() <= 3.0);
    assert_eq!(summary["reports"].as_array().unwrap().len(), 4);
    // an absurd threshold trips the gate: exit 4
    let out = run(&["check-identities", cfg.to_str().unwrap(), "--gate", "--z-max", "1e-9"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error: gate:"), "stderr: {stderr}");
}

#[test]
fn densities_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let body = OU_CONFIG.replace("sim.n = 40", "sim.n = 3000");
    let cfg = write_config(dir.path(), &body);
    let out = run(&["densities", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for name in ["density.csv", "score.csv", "dlog2.csv"] {
        let text = std::fs::read_to_string(dir.path().join("out/densities").join(name)).unwrap();
        assert!(text.starts_with("y,value,std_error,n_eff"), "{name} header");
        assert_eq!(text.lines().count(), 42, "{name} rows");
    }
}

#[test]
fn loglik_and_fit_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    // stable-like measure keeps every transition non-degenerate
    let body = r#"
model.drift.name = "ou-drift"
model.levy.name = "stable-like"
model.levy.u0 = 1.0
model.levy.c = 0.5
model.levy.alpha = 0.6
model.cutoff.u1 = 0.5

sim.t = 1.0
sim.eps = 5e-3
sim.h = 5e-3
sim.n = 400
sim.seed = 11
sim.x0 = 0.8
sim.theta = 1.0

fit.theta0 = 0.7
fit.tol = 0.5
fit.max_iter = 8
"#;
    let cfg = write_config(dir.path(), body);
    // synthetic observations from the library, via the same model
    let run_cfg = levysde::RunConfig::from_str(body).unwrap();
    let model = run_cfg.build_model().unwrap();
    let obs = levysde::likefit::simulate_observations(&model, 1.0, 0.8, 30, 0.4, 5e-3, 5e-3, 99).unwrap();
    let obs_path = dir.path().join("obs.csv");
    obs.to_csv(&obs_path).unwrap();

    let out = run(&["loglik", cfg.to_str().unwrap(), "--obs", obs_path.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let loglik: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/loglik/loglik.json")).unwrap())
            .unwrap();
    assert_eq!(loglik["n_transitions"], 30);
    assert_eq!(loglik["unreliable"], false);

    let out = run(&["fit", cfg.to_str().unwrap(), "--obs", obs_path.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/fit/fit.json")).unwrap()).unwrap();
    assert!(fit["observed_information"].as_f64().unwrap() > 0.0);
    let trace = std::fs::read_to_string(dir.path().join("out/fit/score_trace.csv")).unwrap();
    assert!(trace.starts_with("theta,ell1,ell1_se,ell2,ell2_se"));
}
