//! The `reflow` command line.
//!
//! Exit codes: 0 success, 1 bad input, 2 a gate failed, 3 the engine aborted.
//! All output files are computed in memory and written at the end, each
//! through a temporary file and a rename.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{run_experiment, ExperimentOutcome, MseKind};
use crate::config::{ConfigError, ExperimentConfig};
use crate::fclt::{net_input_ensemble, NetInputConfig};
use crate::model::ReflectionMode;
use crate::queue::{simulate_queue_ctmc, QueueConfig};
use crate::sde::{integrate_reflected_ou, SimConfig};
use crate::seed::NoiseSeed;
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_GATE: i32 = 2;
pub const EXIT_ENGINE: i32 = 3;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "REFLOW_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "reflow",
    version,
    about = "Queueing networks against their reflected OU limit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReflectionArg {
    Projection,
    Penalty,
}

impl From<ReflectionArg> for ReflectionMode {
    fn from(r: ReflectionArg) -> Self {
        match r {
            ReflectionArg::Projection => ReflectionMode::Projection,
            ReflectionArg::Penalty => ReflectionMode::Penalty,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MseArg {
    Means,
    Paired,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
enum EngineArg {
    Ou,
    Queue,
}

#[derive(Debug, clap::Args)]
struct Overrides {
    /// Independent runs per ensemble.
    #[arg(long)]
    runs: Option<usize>,
    /// Queue scales, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<u32>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, value_enum)]
    reflection: Option<ReflectionArg>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(r) = self.runs {
            cfg.ensemble.runs = r;
        }
        if let Some(n) = &self.n {
            cfg.queue.n = n.clone();
        }
        if let Some(s) = self.seed {
            cfg.ensemble.seed = s;
        }
        if let Some(dt) = self.dt {
            cfg.sim.dt = dt;
        }
        if let Some(r) = self.reflection {
            cfg.sim.reflection_mode = r.into();
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare the limit against the queueing chain at several scales.
    Experiment {
        /// `crowd`, `neural`, or a path to a JSON configuration.
        source: String,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_enum)]
        mse: Option<MseArg>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check the Poisson net-input functional CLT.
    Fclt {
        #[arg(long, default_value_t = 10_000)]
        n: u32,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long, default_value_t = 2000)]
        runs: usize,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        /// Uniform output points on `[0, horizon]`.
        #[arg(long, default_value_t = 5)]
        points: usize,
        /// Allowed relative deviation of the variance from `(λ + μ) t`.
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write a single trajectory with its regulator.
    Simulate {
        /// `crowd`, `neural`, or a path to a JSON configuration.
        source: String,
        #[arg(long, value_enum, default_value = "ou")]
        engine: EngineArg,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid(inner) => inner.into(),
            other => Failure::input(other.to_string()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::NonFiniteState { .. } => EXIT_ENGINE,
            _ => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let invocation = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join(" ");
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return f.code;
        }
    };
    match pool.install(|| dispatch(cli.command, &invocation)) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, Failure> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Failure::input(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Failure::input(format!("cannot start worker pool: {e}")))
}

fn dispatch(command: Command, invocation: &str) -> Result<i32, Failure> {
    match command {
        Command::Experiment {
            source,
            overrides,
            mse,
            out,
        } => {
            let mut cfg = ExperimentConfig::resolve(&source)?;
            overrides.apply(&mut cfg);
            if let Some(m) = mse {
                cfg.ensemble.mse = match m {
                    MseArg::Means => MseKind::Means,
                    MseArg::Paired => MseKind::Paired,
                };
            }
            cfg.validate()?;
            cmd_experiment(&cfg, &out, invocation)
        }
        Command::Fclt {
            n,
            lambda,
            mu,
            runs,
            horizon,
            points,
            tolerance,
            seed,
            out,
        } => {
            if runs < 2 {
                return Err(Failure::input(
                    "--runs must be at least 2 for moments to exist",
                ));
            }
            if points < 2 {
                return Err(Failure::input("--points must be at least 2"));
            }
            if !(tolerance > 0.0) {
                return Err(Failure::input("--tolerance must be positive"));
            }
            let grid = crate::analysis::uniform_grid(horizon, points);
            let config = NetInputConfig::new(n, lambda, mu, horizon, grid, runs)?;
            cmd_fclt(&config, tolerance, seed, &out, invocation)
        }
        Command::Simulate {
            source,
            engine,
            overrides,
            out,
        } => {
            let mut cfg = ExperimentConfig::resolve(&source)?;
            overrides.apply(&mut cfg);
            cfg.validate()?;
            cmd_simulate(&cfg, engine, &out, invocation)
        }
    }
}

/// Fixed-width scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_digest: String,
    master_seed: u64,
    tool_version: &'static str,
    timings: BTreeMap<String, f64>,
    files: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes every file via a temporary sibling and a rename, then the manifest.
fn write_outputs(
    out: &Path,
    files: &[(&str, String)],
    manifest: RunManifest<'_>,
) -> Result<(), Failure> {
    std::fs::create_dir_all(out)
        .map_err(|e| Failure::input(format!("cannot create {}: {e}", out.display())))?;
    let mut manifest = manifest;
    for (name, body) in files {
        manifest
            .files
            .insert(name.to_string(), sha256_hex(body.as_bytes()));
    }
    let manifest_body =
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    let all = files
        .iter()
        .map(|(n, b)| (*n, b.as_str()))
        .chain(std::iter::once(("manifest.json", manifest_body.as_str())));
    for (name, body) in all {
        let target = out.join(name);
        let tmp = out.join(format!(".{name}.tmp"));
        std::fs::write(&tmp, body)
            .and_then(|_| std::fs::rename(&tmp, &target))
            .map_err(|e| Failure::input(format!("cannot write {}: {e}", target.display())))?;
    }
    Ok(())
}

fn experiment_csvs(outcome: &ExperimentOutcome) -> (String, String, String) {
    let stats = &outcome.stats;
    let mut means = String::from("time,agent,source,n,mean_x,mean_y\n");
    for a in 0..stats.agent_count() {
        let sources = std::iter::once(("ou", None, &stats.ou.mean[a])).chain(
            stats
                .n_values
                .iter()
                .zip(&stats.queue)
                .map(|(n, q)| ("queue", Some(*n), &q.mean[a])),
        );
        for (label, n, path) in sources {
            let n = n.map(|v| v.to_string()).unwrap_or_default();
            for (t, v) in path.times().iter().zip(path.values()) {
                let _ = writeln!(
                    means,
                    "{},{a},{label},{n},{},{}",
                    fmt_f64(*t),
                    fmt_f64(v[0]),
                    fmt_f64(v[1])
                );
            }
        }
    }
    let mut mse = String::from("time,agent,n,mse\n");
    for (a, curves) in stats.mse_curves.iter().enumerate() {
        for (n, curve) in stats.n_values.iter().zip(curves) {
            for (t, v) in curve.times().iter().zip(curve.raw()) {
                let _ = writeln!(mse, "{},{a},{n},{}", fmt_f64(*t), fmt_f64(*v));
            }
        }
    }
    let mut fit = String::from("agent,slope,intercept,r2\n");
    for (a, f) in outcome.fits.iter().enumerate() {
        match f {
            Some(f) => {
                let _ = writeln!(
                    fit,
                    "{a},{},{},{}",
                    fmt_f64(f.slope),
                    fmt_f64(f.intercept),
                    fmt_f64(f.r_squared)
                );
            }
            None => {
                let _ = writeln!(fit, "{a},,,");
            }
        }
    }
    (means, mse, fit)
}

fn cmd_experiment(cfg: &ExperimentConfig, out: &Path, invocation: &str) -> Result<i32, Failure> {
    let plan = cfg.plan()?;
    for &n in &plan.n_values {
        let grid = crate::analysis::uniform_grid(plan.system.horizon(), plan.grid_points);
        let q = QueueConfig::new(n, plan.system.clone(), grid)?;
        if !q.rate_condition_violations().is_empty() {
            eprintln!(
                "warning: at n = {n} the birth-death rates clamp for agents {:?}; expect small-n bias",
                q.rate_condition_violations()
            );
        }
    }
    let outcome = run_experiment(&plan)?;
    let (means, mse, ratefit) = experiment_csvs(&outcome);
    let report = serde_json::to_string_pretty(&outcome.report).expect("report serializes") + "\n";
    let config_json = serde_json::to_string_pretty(cfg).expect("config serializes") + "\n";
    let manifest = RunManifest {
        command: invocation,
        config_digest: cfg.digest(),
        master_seed: cfg.ensemble.seed,
        tool_version: env!("CARGO_PKG_VERSION"),
        timings: outcome.report.timings.clone(),
        files: BTreeMap::new(),
    };
    write_outputs(
        out,
        &[
            ("means.csv", means),
            ("mse.csv", mse),
            ("ratefit.csv", ratefit),
            ("report.json", report),
            ("config.json", config_json),
        ],
        manifest,
    )?;

    let r = &outcome.report;
    for a in &r.agents {
        let mse: Vec<String> = a
            .terminal_mse
            .iter()
            .map(|(n, m)| format!("n={n}: {m:.3e}"))
            .collect();
        let slope = a
            .fit
            .map(|f| format!("{:.3}", f.slope))
            .unwrap_or_else(|| "undefined".into());
        println!(
            "agent {}: terminal MSE [{}], slope {slope}, monotone {}",
            a.agent,
            mse.join(", "),
            a.monotone_within_noise
        );
    }
    let mut code = EXIT_OK;
    if !r.confinement_ok() {
        eprintln!("gate failed: states left the box");
        code = EXIT_GATE;
    }
    if !r.monotonicity_ok() {
        eprintln!("gate failed: terminal MSE is not nonincreasing in n");
        code = EXIT_GATE;
    }
    Ok(code)
}

fn cmd_fclt(
    config: &NetInputConfig,
    tolerance: f64,
    seed: u64,
    out: &Path,
    invocation: &str,
) -> Result<i32, Failure> {
    let clock = Instant::now();
    let report = net_input_ensemble(config, seed)?;
    let elapsed = clock.elapsed().as_secs_f64();
    let mut csv = String::from("time,mean,variance,excess_kurtosis,theoretical_variance\n");
    for r in &report.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            fmt_f64(r.time),
            fmt_f64(r.mean),
            fmt_f64(r.variance),
            fmt_f64(r.excess_kurtosis),
            fmt_f64(r.theoretical_variance)
        );
    }
    let config_json = serde_json::to_string(config).expect("config serializes");
    let manifest = RunManifest {
        command: invocation,
        config_digest: sha256_hex(config_json.as_bytes()),
        master_seed: seed,
        tool_version: env!("CARGO_PKG_VERSION"),
        timings: BTreeMap::from([("simulate".to_string(), elapsed)]),
        files: BTreeMap::new(),
    };
    write_outputs(out, &[("fclt.csv", csv)], manifest)?;
    let worst = report.max_relative_variance_error();
    println!("max relative variance error {worst:.4} (tolerance {tolerance})");
    if worst > tolerance {
        eprintln!("gate failed: variance deviates from (lambda + mu) t");
        return Ok(EXIT_GATE);
    }
    Ok(EXIT_OK)
}

fn cmd_simulate(
    cfg: &ExperimentConfig,
    engine: EngineArg,
    out: &Path,
    invocation: &str,
) -> Result<i32, Failure> {
    let system = cfg.system()?;
    let seed = NoiseSeed::new(cfg.ensemble.seed, 0);
    let clock = Instant::now();
    let mut csv = String::from("time,agent,x,y,reg_x,reg_y\n");
    let mut violations = 0usize;
    let confined = match engine {
        EngineArg::Ou => {
            let sim = SimConfig::for_system(&system, cfg.sim.dt)?;
            let paths = integrate_reflected_ou(&system, &sim, seed)?;
            for (a, p) in paths.iter().enumerate() {
                for k in 0..p.trajectory.len() {
                    let (x, l) = (p.trajectory.value(k), p.regulator.value(k));
                    violations += usize::from(!system.domain().contains(x));
                    let _ = writeln!(
                        csv,
                        "{},{a},{},{},{},{}",
                        fmt_f64(p.trajectory.times()[k]),
                        fmt_f64(x[0]),
                        fmt_f64(x[1]),
                        fmt_f64(l[0]),
                        fmt_f64(l[1])
                    );
                }
            }
            sim.scheme == ReflectionMode::Projection
        }
        EngineArg::Queue => {
            let n = *cfg
                .queue
                .n
                .first()
                .ok_or_else(|| Failure::input("queue.n is empty"))?;
            let grid = crate::analysis::uniform_grid(system.horizon(), cfg.sim.grid_points);
            let q = QueueConfig::new(n, system.clone(), grid)?;
            let r = simulate_queue_ctmc(&q, seed);
            for (a, (x, l)) in r.scaled.iter().zip(&r.regulator).enumerate() {
                for k in 0..x.len() {
                    let (xv, lv) = (x.value(k), l.value(k));
                    violations += usize::from(!system.domain().contains(xv));
                    let _ = writeln!(
                        csv,
                        "{},{a},{},{},{},{}",
                        fmt_f64(x.times()[k]),
                        fmt_f64(xv[0]),
                        fmt_f64(xv[1]),
                        fmt_f64(lv[0]),
                        fmt_f64(lv[1])
                    );
                }
            }
            true
        }
    };
    let manifest = RunManifest {
        command: invocation,
        config_digest: cfg.digest(),
        master_seed: cfg.ensemble.seed,
        tool_version: env!("CARGO_PKG_VERSION"),
        timings: BTreeMap::from([("simulate".to_string(), clock.elapsed().as_secs_f64())]),
        files: BTreeMap::new(),
    };
    if confined && violations > 0 {
        eprintln!("gate failed: {violations} states outside the box");
        return Ok(EXIT_GATE);
    }
    write_outputs(out, &[("trajectory.csv", csv)], manifest)?;
    Ok(EXIT_OK)
}
