//! Reflected Euler–Maruyama for the interacting Ornstein–Uhlenbeck system.
//!
//! Each step evaluates every agent's drift at the current joint state, adds
//! `σ_i √dt ζ` with a fresh standard Gaussian pair per agent, and then either
//! projects onto the box (recording the push in the regulator) or relies on
//! the penalty drift already folded into `b_i`.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{drift_in_mode, Point, ReflectionMode, SystemSpec};
use crate::seed::NoiseSeed;
use crate::skorokhod::SampledPath;

/// Relative slack allowed between `dt * steps` and the system horizon.
const HORIZON_TOL: f64 = 1e-9;

pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub steps: usize,
    pub scheme: ReflectionMode,
}

impl SimConfig {
    pub fn new(dt: f64, steps: usize, scheme: ReflectionMode) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::param("dt", "must be positive"));
        }
        if steps == 0 {
            return Err(Error::param("steps", "must be positive"));
        }
        Ok(SimConfig { dt, steps, scheme })
    }

    /// Smallest step count with `dt <= target_dt` that lands exactly on `horizon`.
    pub fn for_horizon(horizon: f64, target_dt: f64, scheme: ReflectionMode) -> Result<Self> {
        if !(target_dt > 0.0) || !target_dt.is_finite() {
            return Err(Error::param("dt", "must be positive"));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::param("horizon", "must be positive"));
        }
        let steps = (horizon / target_dt - 1e-9).ceil().max(1.0) as usize;
        SimConfig::new(horizon / steps as f64, steps, scheme)
    }

    /// Step count and dt for `system`, using its reflection mode.
    pub fn for_system(system: &SystemSpec, target_dt: f64) -> Result<Self> {
        SimConfig::for_horizon(system.horizon(), target_dt, system.reflection_mode())
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| k as f64 * self.dt).collect()
    }

    fn check_against(&self, system: &SystemSpec) -> Result<()> {
        let t = system.horizon();
        if (self.horizon() - t).abs() > HORIZON_TOL * t {
            return Err(Error::param(
                "steps",
                format!(
                    "dt * steps = {} does not match the horizon {t}",
                    self.horizon()
                ),
            ));
        }
        Ok(())
    }
}

/// State and regulator paths of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPath {
    pub trajectory: SampledPath,
    pub regulator: SampledPath,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Integrated {
    pub agents: Vec<AgentPath>,
    /// States outside the closed box, counted at every step.
    pub violations: usize,
}

/// One full-resolution run: `steps + 1` samples per agent.
pub fn integrate_reflected_ou(
    system: &SystemSpec,
    config: &SimConfig,
    seed: NoiseSeed,
) -> Result<Vec<AgentPath>> {
    let record: Vec<usize> = (0..=config.steps).collect();
    integrate_recording(system, config, seed, &record).map(|r| r.agents)
}

/// Runs the scheme driven by caller-supplied standard normal draws, recording
/// every step. Draws are consumed in the order step, agent, coordinate, so
/// coarse and fine runs can share one Brownian path.
pub fn integrate_with_normals(
    system: &SystemSpec,
    config: &SimConfig,
    mut normals: impl FnMut() -> f64,
) -> Result<Vec<AgentPath>> {
    let record: Vec<usize> = (0..=config.steps).collect();
    integrate_core(system, config, &mut normals, &record).map(|r| r.agents)
}

/// Runs the scheme but keeps only the listed step indices (sorted, starting at 0).
pub(crate) fn integrate_recording(
    system: &SystemSpec,
    config: &SimConfig,
    seed: NoiseSeed,
    record: &[usize],
) -> Result<Integrated> {
    let mut rng = seed.rng();
    integrate_core(
        system,
        config,
        &mut || StandardNormal.sample(&mut rng),
        record,
    )
}

fn integrate_core(
    system: &SystemSpec,
    config: &SimConfig,
    normals: &mut dyn FnMut() -> f64,
    record: &[usize],
) -> Result<Integrated> {
    config.check_against(system)?;
    debug_assert!(record.first() == Some(&0) && record.windows(2).all(|w| w[0] < w[1]));
    let n = system.len();
    let domain = system.domain();
    let projection = config.scheme == ReflectionMode::Projection;
    let sqrt_dt = config.dt.sqrt();
    let noise: Vec<f64> = system.agents().iter().map(|a| a.noise * sqrt_dt).collect();

    let mut states: Vec<Point> = system.starts();
    let mut regulators: Vec<Point> = vec![[0.0; 2]; n];
    let mut drifts: Vec<Point> = vec![[0.0; 2]; n];
    let mut traj: Vec<Vec<f64>> = vec![Vec::with_capacity(2 * record.len()); n];
    let mut reg: Vec<Vec<f64>> = vec![Vec::with_capacity(2 * record.len()); n];
    let mut violations = 0usize;

    let mut next = 0usize;
    let mut emit = |step: usize,
                    states: &[Point],
                    regulators: &[Point],
                    traj: &mut Vec<Vec<f64>>,
                    reg: &mut Vec<Vec<f64>>| {
        if next < record.len() && record[next] == step {
            for i in 0..n {
                traj[i].extend_from_slice(&states[i]);
                reg[i].extend_from_slice(&regulators[i]);
            }
            next += 1;
        }
    };
    emit(0, &states, &regulators, &mut traj, &mut reg);

    for step in 1..=config.steps {
        for (i, b) in drifts.iter_mut().enumerate() {
            *b = drift_in_mode(i, &states, system, config.scheme);
        }
        for i in 0..n {
            let z0 = normals();
            let z1 = normals();
            let y = [
                states[i][0] + drifts[i][0] * config.dt + noise[i] * z0,
                states[i][1] + drifts[i][1] * config.dt + noise[i] * z1,
            ];
            if !(y[0].is_finite() && y[1].is_finite()) {
                return Err(Error::NonFiniteState { step, agent: i });
            }
            let mut x = y;
            if projection {
                domain.clamp(&mut x);
                regulators[i][0] += x[0] - y[0];
                regulators[i][1] += x[1] - y[1];
            }
            if !domain.contains(&x) {
                violations += 1;
            }
            states[i] = x;
        }
        emit(step, &states, &regulators, &mut traj, &mut reg);
    }

    let all_times = config.times();
    let times: Vec<f64> = record.iter().map(|&k| all_times[k]).collect();
    let agents = traj
        .into_iter()
        .zip(reg)
        .map(|(t, r)| AgentPath {
            trajectory: SampledPath::from_parts(times.clone(), 2, t),
            regulator: SampledPath::from_parts(times.clone(), 2, r),
        })
        .collect();
    Ok(Integrated { agents, violations })
}

/// Mean of the unreflected, non-interacting OU process.
pub fn ou_mean_analytic(theta: f64, mu: Point, x0: Point, t: f64) -> Point {
    let decay = (-theta * t).exp();
    [
        mu[0] + (x0[0] - mu[0]) * decay,
        mu[1] + (x0[1] - mu[1]) * decay,
    ]
}

/// Per-coordinate stationary variance `σ² / 2θ`.
pub fn ou_stationary_variance(theta: f64, sigma: f64) -> f64 {
    sigma * sigma / (2.0 * theta)
}

/// Per-coordinate variance at time `t` from a deterministic start.
pub fn ou_variance_at(theta: f64, sigma: f64, t: f64) -> f64 {
    ou_stationary_variance(theta, sigma) * (1.0 - (-2.0 * theta * t).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentSpec, DomainBox, RepulsionSpec, DEFAULT_PENALTY_GAIN};
    use crate::skorokhod::{check_complementarity, ReflectedPair, BOUNDARY_TOL};

    fn single(goal: Point, start: Point, theta: f64, sigma: f64, lo: f64, hi: f64) -> SystemSpec {
        SystemSpec::new(
            vec![AgentSpec::new(goal, theta, sigma, start)],
            DomainBox::square(lo, hi).unwrap(),
            RepulsionSpec::none(),
            1.0,
            ReflectionMode::Projection,
            DEFAULT_PENALTY_GAIN,
        )
        .unwrap()
    }

    fn crowd() -> SystemSpec {
        let agents = [[0.75, 0.75], [1.75, 1.75], [1.25, 0.25]]
            .into_iter()
            .map(|s| AgentSpec::new([1.25, 0.0], 3.0, 0.5, s))
            .collect();
        SystemSpec::new(
            agents,
            DomainBox::square(0.0, 2.5).unwrap(),
            RepulsionSpec::default(),
            2.0,
            ReflectionMode::Projection,
            DEFAULT_PENALTY_GAIN,
        )
        .unwrap()
    }

    #[test]
    fn equilibrium_without_noise_is_constant() {
        let s = single([1.0, 1.0], [1.0, 1.0], 3.0, 0.0, 0.0, 2.0);
        let cfg = SimConfig::for_system(&s, 1e-3).unwrap();
        let out = integrate_reflected_ou(&s, &cfg, NoiseSeed::new(1, 0)).unwrap();
        assert!(out[0].trajectory.values().all(|v| v == [1.0, 1.0]));
        assert!(out[0].regulator.raw().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_decay_matches_closed_form() {
        let (x0, mu) = ([0.75, 0.75], [1.25, 0.5]);
        let s = single(mu, x0, 3.0, 0.0, -10.0, 10.0);
        let dt = 1e-3;
        let cfg = SimConfig::for_system(&s, dt).unwrap();
        let out = integrate_reflected_ou(&s, &cfg, NoiseSeed::new(1, 0)).unwrap();
        let dist = (x0[0] - mu[0]).hypot(x0[1] - mu[1]);
        let bound = 5.0 * 9.0 * dt * dist;
        for (t, v) in out[0]
            .trajectory
            .times()
            .iter()
            .zip(out[0].trajectory.values())
        {
            let m = ou_mean_analytic(3.0, mu, x0, *t);
            assert!((v[0] - m[0]).hypot(v[1] - m[1]) <= bound);
        }
    }

    #[test]
    fn analytic_oracles() {
        assert_eq!(
            ou_mean_analytic(3.0, [1.25, 0.0], [0.75, 0.75], 0.0),
            [0.75, 0.75]
        );
        let m = ou_mean_analytic(3.0, [1.25, 0.0], [0.75, 0.75], 1.0);
        let e3 = 0.049_787_068_367_863_944;
        assert!((m[0] - (1.25 - 0.5 * e3)).abs() < 1e-15);
        assert!((m[1] - 0.75 * e3).abs() < 1e-15);
        assert!((m[0] - 1.22511).abs() < 1e-5 && (m[1] - 0.037340).abs() < 1e-6);
        let far = ou_mean_analytic(3.0, [1.25, 0.0], [0.75, 0.75], 20.0);
        assert!((far[0] - 1.25).abs() <= (-60.0f64).exp());
        assert!((ou_stationary_variance(3.0, 0.5) - 0.25 / 6.0).abs() < 1e-16);
        assert_eq!(ou_stationary_variance(3.0, 0.0), 0.0);
        assert!(
            (ou_stationary_variance(2.0, 1.0) * 4.0 - ou_stationary_variance(2.0, 2.0)).abs()
                < 1e-15
        );
    }

    #[test]
    fn crowd_paths_stay_in_box_and_are_complementary() {
        let s = crowd();
        let cfg = SimConfig::for_system(&s, 1e-3).unwrap();
        for run in 0..5 {
            let out = integrate_reflected_ou(&s, &cfg, NoiseSeed::new(9, run)).unwrap();
            for a in &out {
                assert!(a.trajectory.values().all(|v| s.domain().contains(v)));
                let pair = ReflectedPair {
                    reflected: a.trajectory.clone(),
                    regulator: a.regulator.clone(),
                    tv: vec![],
                };
                assert!(check_complementarity(&pair, s.domain(), BOUNDARY_TOL).unwrap());
            }
        }
    }

    #[test]
    fn identical_seeds_replay_bit_for_bit() {
        let s = crowd();
        let cfg = SimConfig::for_system(&s, 1e-3).unwrap();
        let a = integrate_reflected_ou(&s, &cfg, NoiseSeed::new(4, 2)).unwrap();
        let b = integrate_reflected_ou(&s, &cfg, NoiseSeed::new(4, 2)).unwrap();
        let c = integrate_reflected_ou(&s, &cfg, NoiseSeed::new(4, 3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn penalty_mode_keeps_regulator_zero() {
        let s = crowd().with_reflection(ReflectionMode::Penalty).unwrap();
        let cfg = SimConfig::for_system(&s, 1e-3).unwrap();
        let out = integrate_reflected_ou(&s, &cfg, NoiseSeed::new(1, 1)).unwrap();
        assert!(out
            .iter()
            .all(|a| a.regulator.raw().iter().all(|&v| v == 0.0)));
        // Excursions stay small under a stiff penalty.
        let worst = out
            .iter()
            .flat_map(|a| a.trajectory.values().map(|v| (-v[1]).max(0.0)))
            .fold(0.0, f64::max);
        assert!(worst < 0.2, "worst excursion {worst}");
    }

    #[test]
    fn blow_up_reports_the_step() {
        let s = single([0.5, 0.5], [0.5, 0.6], 1e300, 0.0, -1e308, 1e308);
        let cfg = SimConfig::for_system(&s, 0.5).unwrap();
        match integrate_reflected_ou(&s, &cfg, NoiseSeed::new(0, 0)) {
            Err(Error::NonFiniteState { agent: 0, step }) => assert!(step >= 1),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let s = single([0.5, 0.5], [0.5, 0.5], 1.0, 0.1, 0.0, 1.0);
        let cfg = SimConfig::new(1e-3, 999, ReflectionMode::Projection).unwrap();
        assert!(integrate_reflected_ou(&s, &cfg, NoiseSeed::new(0, 0)).is_err());
        let cfg = SimConfig::for_horizon(5.0 / 3.0, 1e-3, ReflectionMode::Projection).unwrap();
        assert_eq!(cfg.steps, 1667);
        assert!(cfg.dt <= 1e-3);
        assert!((cfg.horizon() - 5.0 / 3.0).abs() < 1e-12);
    }
}
