//! Matched ensembles of the two engines and the statistics that compare them.
//!
//! Every run is seeded from `(master, run_index)` and ensembles are collected
//! in run order, so all aggregates are deterministic folds independent of how
//! many workers executed the runs.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ReflectionMode, SystemSpec};
use crate::queue::{simulate_queue_sampled, QueueConfig};
use crate::sde::{integrate_recording, SimConfig};
use crate::seed::{derive_master, NoiseSeed};
use crate::skorokhod::SampledPath;

/// Start of the window used for post-transient comparisons.
pub const TRANSIENT_END: f64 = 0.25;

pub const DEFAULT_GRID_POINTS: usize = 201;

/// `points` uniform times on `[0, horizon]`.
pub fn uniform_grid(horizon: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2, "a grid needs at least two points");
    let last = (points - 1) as f64;
    (0..points)
        .map(|k| {
            if k + 1 == points {
                horizon
            } else {
                horizon * k as f64 / last
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Engine {
    /// Reflected Euler–Maruyama for the limiting system.
    Ou(SimConfig),
    /// Exact simulation of the scale-`n` queueing chain.
    Queue { n: u32 },
}

impl Engine {
    pub fn label(&self) -> String {
        match self {
            Engine::Ou(_) => "ou".into(),
            Engine::Queue { n } => format!("queue@{n}"),
        }
    }
}

/// Grid-sampled paths of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPaths {
    pub run_index: u64,
    pub agents: Vec<SampledPath>,
    /// States found outside the closed box during the run.
    pub violations: u64,
}

fn step_indices(grid: &[f64], config: &SimConfig) -> Result<Vec<usize>> {
    grid.iter()
        .map(|&g| {
            let k = (g / config.dt).round();
            if (k * config.dt - g).abs() > 1e-9 * g.max(1.0) || k as usize > config.steps {
                Err(Error::param(
                    "grid",
                    format!("time {g} is not a step of dt = {}", config.dt),
                ))
            } else {
                Ok(k as usize)
            }
        })
        .collect()
}

/// Runs `runs` independent realizations on `grid`, seeded by `(master_seed, r)`.
/// The result is ordered by run index.
pub fn run_ensemble(
    system: &SystemSpec,
    engine: &Engine,
    grid: &[f64],
    runs: usize,
    master_seed: u64,
) -> Result<Vec<RunPaths>> {
    if runs == 0 {
        return Err(Error::param("runs", "must be positive"));
    }
    match engine {
        Engine::Ou(config) => {
            let record = step_indices(grid, config)?;
            (0..runs as u64)
                .into_par_iter()
                .map(|r| {
                    integrate_recording(system, config, NoiseSeed::new(master_seed, r), &record)
                        .map(|out| RunPaths {
                            run_index: r,
                            agents: out
                                .agents
                                .into_iter()
                                .map(|a| {
                                    SampledPath::from_parts(
                                        grid.to_vec(),
                                        2,
                                        a.trajectory.raw().to_vec(),
                                    )
                                })
                                .collect(),
                            violations: out.violations as u64,
                        })
                        .map_err(|e| Error::Run {
                            run_index: r,
                            source: Box::new(e),
                        })
                })
                .collect()
        }
        Engine::Queue { n } => {
            let config = QueueConfig::new(*n, system.clone(), grid.to_vec())?;
            Ok((0..runs as u64)
                .into_par_iter()
                .map(|r| {
                    let out = simulate_queue_sampled(&config, NoiseSeed::new(master_seed, r));
                    RunPaths {
                        run_index: r,
                        agents: out.scaled,
                        violations: out.diagnostics.violations,
                    }
                })
                .collect())
        }
    }
}

/// Per-agent pointwise mean and per-coordinate unbiased variance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub runs: usize,
    pub mean: Vec<SampledPath>,
    pub variance: Vec<SampledPath>,
    pub violations: u64,
}

pub fn summarize_ensemble(runs: &[RunPaths]) -> Result<EnsembleSummary> {
    let first = runs.first().ok_or(Error::TooFewSamples {
        required: 1,
        got: 0,
    })?;
    let grid = first.agents[0].times().to_vec();
    let width = first.agents[0].raw().len();
    let count = runs.len() as f64;
    let mut mean = Vec::new();
    let mut variance = Vec::new();
    for a in 0..first.agents.len() {
        let mut sum = vec![0.0; width];
        for run in runs {
            let p = &run.agents[a];
            if p.times() != grid.as_slice() {
                return Err(Error::GridMismatch);
            }
            for (s, v) in sum.iter_mut().zip(p.raw()) {
                *s += v;
            }
        }
        let m: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let mut ss = vec![0.0; width];
        for run in runs {
            for ((s, v), mu) in ss.iter_mut().zip(run.agents[a].raw()).zip(&m) {
                *s += (v - mu) * (v - mu);
            }
        }
        let denom = (count - 1.0).max(1.0);
        mean.push(SampledPath::from_parts(grid.clone(), 2, m));
        variance.push(SampledPath::from_parts(
            grid.clone(),
            2,
            ss.iter().map(|s| s / denom).collect(),
        ));
    }
    Ok(EnsembleSummary {
        runs: runs.len(),
        mean,
        variance,
        violations: runs.iter().map(|r| r.violations).sum(),
    })
}

/// Squared Euclidean distance between two mean paths at every grid time.
pub fn mse_curve(mean_a: &SampledPath, mean_b: &SampledPath) -> Result<SampledPath> {
    if !mean_a.same_grid(mean_b) || mean_a.dim() != mean_b.dim() {
        return Err(Error::GridMismatch);
    }
    let values = mean_a
        .values()
        .zip(mean_b.values())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
        .collect();
    Ok(SampledPath::from_parts(mean_a.times().to_vec(), 1, values))
}

/// Run-by-run squared distance averaged over runs paired by index.
pub fn paired_mse_curve(a: &[RunPaths], b: &[RunPaths], agent: usize) -> Result<SampledPath> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::param(
            "runs",
            "paired comparison needs equal, nonzero run counts",
        ));
    }
    let grid = a[0].agents[agent].times().to_vec();
    let mut acc = vec![0.0; grid.len()];
    for (ra, rb) in a.iter().zip(b) {
        let c = mse_curve(&ra.agents[agent], &rb.agents[agent])?;
        if c.times() != grid.as_slice() {
            return Err(Error::GridMismatch);
        }
        for (s, v) in acc.iter_mut().zip(c.raw()) {
            *s += v;
        }
    }
    let count = a.len() as f64;
    Ok(SampledPath::from_parts(
        grid,
        1,
        acc.into_iter().map(|s| s / count).collect(),
    ))
}

/// Expected MSE of means from Monte Carlo noise alone:
/// `Σ_c var_a,c / R_a + var_b,c / R_b`.
pub fn mc_floor_curve(a: &EnsembleSummary, b: &EnsembleSummary, agent: usize) -> SampledPath {
    let (va, vb) = (&a.variance[agent], &b.variance[agent]);
    let (ra, rb) = (a.runs as f64, b.runs as f64);
    let values = va
        .values()
        .zip(vb.values())
        .map(|(x, y)| x.iter().sum::<f64>() / ra + y.iter().sum::<f64>() / rb)
        .collect();
    SampledPath::from_parts(va.times().to_vec(), 1, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MseKind {
    /// Distance between ensemble means.
    #[default]
    Means,
    /// Average of per-run distances, runs paired by index.
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(ln n, ln mse)`.
pub fn convergence_rate_fit(n_values: &[u32], terminal_mse: &[f64]) -> Result<RateFit> {
    if n_values.len() != terminal_mse.len() {
        return Err(Error::param("terminal_mse", "one value per n is required"));
    }
    if n_values.len() < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            got: n_values.len(),
        });
    }
    if let Some(&bad) = terminal_mse.iter().find(|&&m| !(m > 0.0)) {
        return Err(Error::NonPositiveMse(bad));
    }
    let xs: Vec<f64> = n_values.iter().map(|&n| f64::from(n).ln()).collect();
    let ys: Vec<f64> = terminal_mse.iter().map(|m| m.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::param(
            "n_values",
            "at least two distinct scales are required",
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Everything needed to compare the limit against the chain at several scales.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub grid: Vec<f64>,
    pub n_values: Vec<u32>,
    pub mse_kind: MseKind,
    pub ou: EnsembleSummary,
    /// One summary per entry of `n_values`.
    pub queue: Vec<EnsembleSummary>,
    /// `[agent][n]` MSE curves.
    pub mse_curves: Vec<Vec<SampledPath>>,
    /// `[agent][n]` value at the final grid time.
    pub terminal_mse: Vec<Vec<f64>>,
    /// `[agent][n]` Monte Carlo floor of the MSE of means at the final time.
    pub terminal_floor: Vec<Vec<f64>>,
    /// Whether the OU confinement count is meaningful (projection mode).
    pub ou_confined_by_construction: bool,
}

impl EnsembleStats {
    pub fn agent_count(&self) -> usize {
        self.mse_curves.len()
    }
}

/// Builds comparison statistics from raw ensembles. `queue_runs` is ordered
/// like `n_values`.
pub fn compare_ensembles(
    n_values: &[u32],
    ou_runs: &[RunPaths],
    queue_runs: &[Vec<RunPaths>],
    kind: MseKind,
    ou_scheme: ReflectionMode,
) -> Result<EnsembleStats> {
    if n_values.len() != queue_runs.len() {
        return Err(Error::param(
            "n",
            "one queue ensemble per scale is required",
        ));
    }
    let ou = summarize_ensemble(ou_runs)?;
    let queue = queue_runs
        .iter()
        .map(|r| summarize_ensemble(r))
        .collect::<Result<Vec<_>>>()?;
    let agents = ou.mean.len();
    let mut mse_curves = vec![Vec::new(); agents];
    let mut terminal_mse = vec![Vec::new(); agents];
    let mut terminal_floor = vec![Vec::new(); agents];
    for a in 0..agents {
        for (qs, qr) in queue.iter().zip(queue_runs) {
            let curve = match kind {
                MseKind::Means => mse_curve(&qs.mean[a], &ou.mean[a])?,
                MseKind::Paired => paired_mse_curve(qr, ou_runs, a)?,
            };
            terminal_mse[a].push(*curve.raw().last().unwrap());
            terminal_floor[a].push(*mc_floor_curve(qs, &ou, a).raw().last().unwrap());
            mse_curves[a].push(curve);
        }
    }
    Ok(EnsembleStats {
        grid: ou.mean[0].times().to_vec(),
        n_values: n_values.to_vec(),
        mse_kind: kind,
        ou,
        queue,
        mse_curves,
        terminal_mse,
        terminal_floor,
        ou_confined_by_construction: ou_scheme == ReflectionMode::Projection,
    })
}

/// Strictly nonincreasing check on an ordered sequence.
pub fn is_nonincreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0])
}

/// Nonincreasing, except for at most one inversion between two values that
/// both lie below twice their Monte Carlo floor.
pub fn is_nonincreasing_within_noise(values: &[f64], floor: &[f64]) -> bool {
    let mut inversions = 0;
    for k in 1..values.len() {
        if values[k] > values[k - 1] {
            let noisy = values[k] < 2.0 * floor[k] && values[k - 1] < 2.0 * floor[k - 1];
            if !noisy {
                return false;
            }
            inversions += 1;
        }
    }
    inversions <= 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub agent: usize,
    pub terminal_mse: Vec<(u32, f64)>,
    pub terminal_floor: Vec<(u32, f64)>,
    pub monotone: bool,
    pub monotone_within_noise: bool,
    /// MSE at the largest `n` stays at or below the smallest-`n` curve for `t ≥ 0.25`.
    pub dominates_past_transient: bool,
    pub slope_defined: bool,
    pub fit: Option<RateFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mse_kind: MseKind,
    pub agents: Vec<AgentReport>,
    pub ou_violations: u64,
    pub queue_violations: Vec<(u32, u64)>,
    pub ou_confined_by_construction: bool,
    pub timings: BTreeMap<String, f64>,
}

impl ExperimentReport {
    pub fn confinement_ok(&self) -> bool {
        self.queue_violations.iter().all(|(_, v)| *v == 0)
            && (!self.ou_confined_by_construction || self.ou_violations == 0)
    }

    pub fn monotonicity_ok(&self) -> bool {
        self.agents.iter().all(|a| a.monotone_within_noise)
    }
}

pub fn summarize_experiment(
    stats: &EnsembleStats,
    fits: &[Option<RateFit>],
    timings: BTreeMap<String, f64>,
) -> ExperimentReport {
    let last = stats.n_values.len().saturating_sub(1);
    let agents = (0..stats.agent_count())
        .map(|a| {
            let mse = &stats.terminal_mse[a];
            let floor = &stats.terminal_floor[a];
            let dominates = if stats.n_values.len() < 2 {
                true
            } else {
                let (small, large) = (&stats.mse_curves[a][0], &stats.mse_curves[a][last]);
                small
                    .times()
                    .iter()
                    .zip(small.raw().iter().zip(large.raw()))
                    .filter(|(t, _)| **t >= TRANSIENT_END)
                    .all(|(_, (s, l))| l <= s)
            };
            let fit = fits.get(a).copied().flatten();
            AgentReport {
                agent: a,
                terminal_mse: stats
                    .n_values
                    .iter()
                    .copied()
                    .zip(mse.iter().copied())
                    .collect(),
                terminal_floor: stats
                    .n_values
                    .iter()
                    .copied()
                    .zip(floor.iter().copied())
                    .collect(),
                monotone: is_nonincreasing(mse),
                monotone_within_noise: is_nonincreasing_within_noise(mse, floor),
                dominates_past_transient: dominates,
                slope_defined: fit.is_some(),
                fit,
            }
        })
        .collect();
    ExperimentReport {
        mse_kind: stats.mse_kind,
        agents,
        ou_violations: stats.ou.violations,
        queue_violations: stats
            .n_values
            .iter()
            .copied()
            .zip(stats.queue.iter().map(|q| q.violations))
            .collect(),
        ou_confined_by_construction: stats.ou_confined_by_construction,
        timings,
    }
}

/// A fully resolved comparison experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub system: SystemSpec,
    pub dt: f64,
    pub grid_points: usize,
    pub n_values: Vec<u32>,
    pub runs: usize,
    pub seed: u64,
    pub mse_kind: MseKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub stats: EnsembleStats,
    pub fits: Vec<Option<RateFit>>,
    pub report: ExperimentReport,
}

/// Seed tag of the limit ensemble; queue ensembles use `n`.
const OU_TAG: u64 = u64::MAX;

/// Runs the limit ensemble and one queue ensemble per `n`, then compares.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutcome> {
    let mut timings = BTreeMap::new();
    let sim = SimConfig::for_system(&plan.system, plan.dt)?;
    let grid = uniform_grid(plan.system.horizon(), plan.grid_points);

    let clock = Instant::now();
    let ou_runs = run_ensemble(
        &plan.system,
        &Engine::Ou(sim),
        &grid,
        plan.runs,
        derive_master(plan.seed, OU_TAG),
    )?;
    timings.insert("ou".to_string(), clock.elapsed().as_secs_f64());

    let mut queue_runs = Vec::with_capacity(plan.n_values.len());
    for &n in &plan.n_values {
        let clock = Instant::now();
        queue_runs.push(run_ensemble(
            &plan.system,
            &Engine::Queue { n },
            &grid,
            plan.runs,
            derive_master(plan.seed, u64::from(n)),
        )?);
        timings.insert(format!("queue@{n}"), clock.elapsed().as_secs_f64());
    }

    let clock = Instant::now();
    let stats = compare_ensembles(
        &plan.n_values,
        &ou_runs,
        &queue_runs,
        plan.mse_kind,
        sim.scheme,
    )?;
    let fits = stats
        .terminal_mse
        .iter()
        .map(|m| convergence_rate_fit(&plan.n_values, m).ok())
        .collect::<Vec<_>>();
    timings.insert("analysis".to_string(), clock.elapsed().as_secs_f64());
    let report = summarize_experiment(&stats, &fits, timings);
    Ok(ExperimentOutcome {
        stats,
        fits,
        report,
    })
}
