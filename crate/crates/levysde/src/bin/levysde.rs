//! Command-line entry point. One TOML configuration file drives every
//! command; artifacts land under `<output.dir>/<command>/` next to a
//! manifest echoing the configuration, seeds, version, and wall time.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 identity gate failure (with --gate). Every error prints one
//! machine-parsable line on stderr: `error: <kind>: <detail>`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use levysde::config::RunConfig;
use levysde::error::{ConfigError, EstimError, FitError, SimError};
use levysde::jumpsim::{integrate_path, JumpSampler};
use levysde::likefit::{fit, loglik_derivatives, ObservationSet};
use levysde::malliavin::weights_for_path;
use levysde::mcestim::{
    check_derivative_identity, kernel_density, kernel_g, log_density_second_derivative, map_paths,
    EnsembleConfig, TestFunction,
};
use levysde::model::Model;
use levysde::numerics::mix_seed;
use levysde::varsens::propagate_sensitivities;

#[derive(Parser)]
#[command(name = "levysde", version, about = "Simulation and drift inference for Levy-driven SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Path to the TOML run configuration.
    config: PathBuf,
    /// Override sim.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override sim.n.
    #[arg(long)]
    n_paths: Option<usize>,
    /// Override sim.theta.
    #[arg(long)]
    theta: Option<f64>,
    /// Cap worker threads (default: available cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Override output.dir.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the model hypotheses and write a validation report.
    Validate(Common),
    /// Simulate paths and export the skeletons as CSV.
    Simulate(Common),
    /// Export per-path sensitivity bundles and weight functionals.
    Weights(Common),
    /// Run the derivative-identity checks (orders 1 and 2).
    CheckIdentities {
        #[command(flatten)]
        common: Common,
        /// Exit 4 when any identity z-score exceeds the threshold.
        #[arg(long)]
        gate: bool,
        /// z-score threshold used by --gate.
        #[arg(long, default_value_t = 3.0)]
        z_max: f64,
    },
    /// Kernel density, score, and second log-density derivative on a grid.
    Densities(Common),
    /// Log-likelihood derivative estimates at sim.theta over observations.
    Loglik {
        #[command(flatten)]
        common: Common,
        /// Observations CSV with a `t,x` header.
        #[arg(long)]
        obs: PathBuf,
    },
    /// Newton fit of the drift parameter from observations.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        obs: PathBuf,
    },
}

enum CliError {
    Config(String),
    Numerical(String),
    Gate(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Gate(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::Gate(_) => "gate",
        }
    }

    fn detail(&self) -> &str {
        match self {
            CliError::Config(s) | CliError::Numerical(s) | CliError::Gate(s) => s,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<EstimError> for CliError {
    fn from(e: EstimError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::BadObservations(_) | FitError::ThetaOutsideDomain { .. } => CliError::Config(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Numerical(format!("io: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Numerical(format!("csv: {e}"))
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    model_hash: String,
    seed: u64,
    n_paths: usize,
    wall_time_ms: u128,
    config: &'a RunConfig,
}

struct Ctx {
    cfg: RunConfig,
    model: Model,
    ens: EnsembleConfig,
    out: PathBuf,
    started: Instant,
}

fn load(common: &Common, command: &str) -> Result<Ctx, CliError> {
    let mut cfg = RunConfig::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.sim.seed = seed;
    }
    if let Some(n) = common.n_paths {
        cfg.sim.n = n;
    }
    if let Some(theta) = common.theta {
        cfg.sim.theta = theta;
    }
    if let Some(dir) = &common.out_dir {
        cfg.output_dir = dir.display().to_string();
    }
    if let Some(threads) = common.threads {
        // ignore failure if a global pool already exists (tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let model = cfg.build_model()?;
    let ens = cfg.ensemble_config();
    let out = Path::new(&cfg.output_dir).join(command);
    std::fs::create_dir_all(&out)?;
    Ok(Ctx { cfg, model, ens, out, started: Instant::now() })
}

impl Ctx {
    fn write_manifest(&self, command: &str) -> Result<(), CliError> {
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            model_hash: self.cfg.model_hash(),
            seed: self.ens.master_seed,
            n_paths: self.ens.n,
            wall_time_ms: self.started.elapsed().as_millis(),
            config: &self.cfg,
        };
        let path = self.out.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        std::fs::write(self.out.join(name), serde_json::to_string_pretty(value).expect("serializes"))?;
        Ok(())
    }

    /// Grid from the config, or x0 ± 4 sd of a pilot ensemble.
    fn resolve_grid(&self) -> Result<Vec<f64>, CliError> {
        if let Some(grid) = self.cfg.y_grid() {
            return Ok(grid);
        }
        let mut pilot = self.ens.clone();
        pilot.n = self.ens.n.min(2000).max(2);
        let xs = map_paths(&self.model, &pilot, &[pilot.theta], &[false], |_, outs| outs[0].x_t)?;
        let (mean, _) = levysde::numerics::mean_se(&xs);
        let sd = levysde::numerics::sample_std(&xs).max(1e-6);
        let m = self.cfg.estimator.y_count.max(2);
        let (lo, hi) = (mean - 4.0 * sd, mean + 4.0 * sd);
        Ok((0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect())
    }
}

fn grid_csv(path: &Path, rows: &[levysde::mcestim::GridEstimate]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["y", "value", "std_error", "n_eff"])?;
    for r in rows {
        match r.est {
            Some(e) => w.write_record([
                r.y.to_string(),
                e.value.to_string(),
                e.std_error.to_string(),
                e.n_used.to_string(),
            ])?,
            None => w.write_record([r.y.to_string(), String::new(), String::new(), "0".into()])?,
        }
    }
    w.flush().map_err(|e| CliError::Numerical(format!("csv flush: {e}")))?;
    Ok(())
}

fn cmd_validate(common: &Common) -> Result<(), CliError> {
    let ctx = load(common, "validate")?;
    let report = ctx.model.validate();
    ctx.write_json("report.json", &report)?;
    ctx.write_manifest("validate")?;
    for check in &report.checks {
        let tag = if check.passed { "pass" } else if check.informational { "info" } else { "FAIL" };
        println!("{tag:4} {}: {}", check.name, check.detail);
    }
    Ok(())
}

fn cmd_simulate(common: &Common) -> Result<(), CliError> {
    let ctx = load(common, "simulate")?;
    let sampler = JumpSampler::new(&ctx.model.levy, ctx.ens.eps)?;
    let mut w = csv::Writer::from_path(ctx.out.join("paths.csv"))?;
    w.write_record(["path_id", "t", "x", "is_jump", "u"])?;
    for i in 0..ctx.ens.n as u64 {
        let jumps = sampler.sample(ctx.ens.t, mix_seed(ctx.ens.master_seed, i));
        let skel = integrate_path(&jumps, &ctx.model.drift, ctx.ens.theta, ctx.ens.x0, ctx.ens.h)
            .map_err(EstimError::from)?;
        for k in 0..skel.len() {
            w.write_record([
                i.to_string(),
                skel.times[k].to_string(),
                skel.x_post[k].to_string(),
                (skel.is_jump[k] as u8).to_string(),
                skel.jump_size[k].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| CliError::Numerical(format!("csv flush: {e}")))?;
    ctx.write_manifest("simulate")?;
    println!("wrote {} paths to {}", ctx.ens.n, ctx.out.join("paths.csv").display());
    Ok(())
}

fn cmd_weights(common: &Common) -> Result<(), CliError> {
    let ctx = load(common, "weights")?;
    let sampler = JumpSampler::new(&ctx.model.levy, ctx.ens.eps)?;
    let mut bw = csv::Writer::from_path(ctx.out.join("bundle.csv"))?;
    let mut ww = csv::Writer::from_path(ctx.out.join("weights.csv"))?;
    bw.write_record(["path_id", "Et", "Z1", "Z2", "Y1", "Y2", "Y3", "W1", "W2", "V1"])?;
    ww.write_record(["path_id", "delta1", "d_delta1", "xi1", "xi2", "degenerate"])?;
    let mut excluded = 0usize;
    for i in 0..ctx.ens.n as u64 {
        let jumps = sampler.sample(ctx.ens.t, mix_seed(ctx.ens.master_seed, i));
        let skel = integrate_path(&jumps, &ctx.model.drift, ctx.ens.theta, ctx.ens.x0, ctx.ens.h)
            .map_err(EstimError::from)?;
        let b = propagate_sensitivities(&skel, &jumps, &ctx.model.drift, &ctx.model.cutoff)
            .map_err(EstimError::from)?;
        let wt = weights_for_path(&jumps, &b, &ctx.model.levy, &ctx.model.cutoff);
        excluded += wt.degenerate as usize;
        bw.write_record([
            i.to_string(),
            b.et.to_string(),
            b.z1.to_string(),
            b.z2.to_string(),
            b.y1.to_string(),
            b.y2.to_string(),
            b.y3.to_string(),
            b.w1.to_string(),
            b.w2.to_string(),
            b.v1.to_string(),
        ])?;
        ww.write_record([
            i.to_string(),
            wt.delta1.to_string(),
            wt.d_delta1.to_string(),
            wt.xi1.map(|v| v.to_string()).unwrap_or_default(),
            wt.xi2.map(|v| v.to_string()).unwrap_or_default(),
            (wt.degenerate as u8).to_string(),
        ])?;
    }
    bw.flush().map_err(|e| CliError::Numerical(format!("csv flush: {e}")))?;
    ww.flush().map_err(|e| CliError::Numerical(format!("csv flush: {e}")))?;
    ctx.write_manifest("weights")?;
    println!("wrote {} paths ({} degenerate) to {}", ctx.ens.n, excluded, ctx.out.display());
    Ok(())
}

#[derive(Serialize)]
struct IdentitySummary {
    reports: Vec<levysde::mcestim::IdentityReport>,
    max_abs_z: f64,
    excluded_fraction: f64,
}

fn cmd_check_identities(common: &Common, gate: bool, z_max: f64) -> Result<(), CliError> {
    let ctx = load(common, "check-identities")?;
    let cases = [
        (1u8, TestFunction::Id),
        (1, TestFunction::Sin),
        (2, TestFunction::Sin),
        (2, TestFunction::BoundedRational),
    ];
    let mut reports = Vec::new();
    for (order, f) in cases {
        reports.push(check_derivative_identity(&ctx.model, &ctx.ens, order, f)?);
    }
    let max_abs_z = reports.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
    let excluded_fraction = reports.iter().map(|r| r.excluded_fraction).fold(0.0, f64::max);
    let summary = IdentitySummary { reports, max_abs_z, excluded_fraction };
    ctx.write_json("identities.json", &summary)?;
    let mut w = csv::Writer::from_path(ctx.out.join("identities.csv"))?;
    w.write_record(["order", "f", "left", "right", "diff", "se_diff", "z", "excluded_fraction", "valid"])?;
    for r in &summary.reports {
        w.write_record([
            r.order.to_string(),
            r.f.name().to_string(),
            r.left.value.to_string(),
            r.right.value.to_string(),
            r.diff.to_string(),
            r.se_diff.to_string(),
            r.z.to_string(),
            r.excluded_fraction.to_string(),
            r.valid.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::Numerical(format!("csv flush: {e}")))?;
    ctx.write_manifest("check-identities")?;
    for r in &summary.reports {
        println!(
            "order {} f={:<16} left {:+.5e}  right {:+.5e}  z = {:+.2}",
            r.order,
            r.f.name(),
            r.left.value,
            r.right.value,
            r.z
        );
    }
    if gate && max_abs_z > z_max {
        return Err(CliError::Gate(format!("max |z| = {max_abs_z:.3} exceeds {z_max}")));
    }
    Ok(())
}

fn cmd_densities(common: &Common) -> Result<(), CliError> {
    let ctx = load(common, "densities")?;
    let grid = ctx.resolve_grid()?;
    let dens = kernel_density(&ctx.model, &ctx.ens, &grid)?;
    grid_csv(&ctx.out.join("density.csv"), &dens)?;
    let score = kernel_g(&ctx.model, &ctx.ens, &grid, 1)?;
    grid_csv(&ctx.out.join("score.csv"), &score)?;
    let dlog2 = log_density_second_derivative(&ctx.model, &ctx.ens, &grid)?;
    grid_csv(&ctx.out.join("dlog2.csv"), &dlog2)?;
    ctx.write_manifest("densities")?;
    println!("wrote density/score/dlog2 over {} grid points to {}", grid.len(), ctx.out.display());
    Ok(())
}

fn cmd_loglik(common: &Common, obs_path: &Path) -> Result<(), CliError> {
    let ctx = load(common, "loglik")?;
    let obs = ObservationSet::from_csv(obs_path)?;
    let d = loglik_derivatives(&ctx.model, &obs, ctx.ens.theta, &ctx.ens)?;
    ctx.write_json("loglik.json", &d)?;
    ctx.write_manifest("loglik")?;
    println!(
        "ell1 = {:+.6e} (se {:.3e})  ell2 = {:+.6e} (se {:.3e})  dropped {}/{}",
        d.ell1.value, d.ell1.std_error, d.ell2.value, d.ell2.std_error, d.n_dropped, d.n_transitions
    );
    Ok(())
}

fn cmd_fit(common: &Common, obs_path: &Path) -> Result<(), CliError> {
    let ctx = load(common, "fit")?;
    let obs = ObservationSet::from_csv(obs_path)?;
    let result = fit(&ctx.model, &obs, ctx.cfg.fit.theta0, &ctx.ens, &ctx.cfg.fit_options())?;
    ctx.write_json("fit.json", &result)?;
    let mut w = csv::Writer::from_path(ctx.out.join("score_trace.csv"))?;
    w.write_record(["theta", "ell1", "ell1_se", "ell2", "ell2_se"])?;
    for p in &result.score_trace {
        w.write_record([
            p.theta.to_string(),
            p.ell1.to_string(),
            p.ell1_se.to_string(),
            p.ell2.to_string(),
            p.ell2_se.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::Numerical(format!("csv flush: {e}")))?;
    ctx.write_manifest("fit")?;
    println!(
        "theta_hat = {:.6} (converged: {}, iterations {}, information {:.4e}, 95% CI [{:.4}, {:.4}])",
        result.theta_hat,
        result.convergence_flag,
        result.iterations,
        result.observed_information,
        result.ci_95.0,
        result.ci_95.1
    );
    Ok(())
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Validate(c) => cmd_validate(c),
        Command::Simulate(c) => cmd_simulate(c),
        Command::Weights(c) => cmd_weights(c),
        Command::CheckIdentities { common, gate, z_max } => cmd_check_identities(common, *gate, *z_max),
        Command::Densities(c) => cmd_densities(c),
        Command::Loglik { common, obs } => cmd_loglik(common, obs),
        Command::Fit { common, obs } => cmd_fit(common, obs),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e.detail());
            ExitCode::from(e.exit_code())
        }
    }
}
