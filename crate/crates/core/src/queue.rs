//! Pre-limit controlled queueing chain.
//!
//! Each agent owns a pair of queue counts `Q_i ∈ Z²` centered at its nominal
//! level `n μ_i`, so the diffusion-scaled state is `X_i = (Q_i - n μ_i)/√n`.
//! In every coordinate the count moves by ±1 at rates
//!
//! ```text
//! α± = max(0, (n σ² ± √n b) / 2)
//! ```
//!
//! where `b` is the drift of the limiting system evaluated at the current
//! scaled state. While neither rate clamps, the scaled jump chain has
//! infinitesimal mean `b` and variance `σ²` exactly. Moves whose destination
//! leaves the box have their rate set to zero.
//!
//! The chain is simulated exactly (direct-method Gillespie). Its regulator is
//! the compensator of the blocked moves, `∫ (α₋ 1{down blocked} - α₊ 1{up
//! blocked}) / √n dt`, which only grows while the state sits on a face and
//! always points inward.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::model::{drift_in_mode, Point, ReflectionMode, SystemSpec};
use crate::seed::NoiseSeed;
use crate::skorokhod::{validate_grid, SampledPath};

/// Lattice point of one agent.
pub type Lattice = [i64; 2];

/// Birth and death rates realizing drift `b` and variance `σ²` after scaling.
#[inline]
pub fn birth_death_rates(n: u32, sigma: f64, b: f64) -> (f64, f64) {
    let n = f64::from(n);
    let base = n * sigma * sigma;
    let push = n.sqrt() * b;
    (
        ((base + push) / 2.0).max(0.0),
        ((base - push) / 2.0).max(0.0),
    )
}

/// Whether one of the rates from [`birth_death_rates`] is clamped at zero.
#[inline]
pub fn rates_clamp(n: u32, sigma: f64, b: f64) -> bool {
    let n = f64::from(n);
    n * sigma * sigma < n.sqrt() * b.abs()
}

/// `(Q - n μ) / √n`, componentwise.
#[inline]
pub fn diffusion_scale(q: Lattice, n: u32, mu: Point) -> Point {
    let nf = f64::from(n);
    let s = nf.sqrt();
    [
        (q[0] as f64 - nf * mu[0]) / s,
        (q[1] as f64 - nf * mu[1]) / s,
    ]
}

/// `n μ + √n x`, the unrounded nominal queue level for scaled state `x`.
#[inline]
pub fn nominal_reconstruction(x: Point, n: u32, mu: Point) -> Point {
    let nf = f64::from(n);
    let s = nf.sqrt();
    [nf * mu[0] + s * x[0], nf * mu[1] + s * x[1]]
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueConfig {
    n: u32,
    system: SystemSpec,
    grid: Vec<f64>,
    rate_condition_violations: Vec<usize>,
}

impl QueueConfig {
    pub fn new(n: u32, system: SystemSpec, grid: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "scale must be at least 1"));
        }
        for (i, a) in system.agents().iter().enumerate() {
            if !(a.noise > 0.0) {
                return Err(Error::InvalidAgent {
                    index: i,
                    reason: "the queue engine needs positive noise".into(),
                });
            }
        }
        let d = system.domain();
        if d.lower().iter().chain(d.upper()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidBox(
                "the queue lattice needs a bounded box".into(),
            ));
        }
        validate_grid(&grid)?;
        if *grid.last().unwrap() > system.horizon() * (1.0 + 1e-12) {
            return Err(Error::param("grid", "extends past the horizon"));
        }
        let nf = f64::from(n);
        let rate_condition_violations = (0..system.len())
            .filter(|&i| {
                let s = system.agents()[i].noise;
                nf * s * s < nf.sqrt() * system.drift_bound(i)
            })
            .collect();
        Ok(QueueConfig {
            n,
            system,
            grid,
            rate_condition_violations,
        })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn system(&self) -> &SystemSpec {
        &self.system
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Agents for which `n σ² ≥ √n sup|b|` fails somewhere in the box, so
    /// that rate clamping biases the chain at this `n`.
    pub fn rate_condition_violations(&self) -> &[usize] {
        &self.rate_condition_violations
    }

    /// Lattice range `[lo, hi]` per agent per coordinate whose scaled image
    /// lies in the closed box.
    fn lattice_bounds(&self) -> Vec<[(i64, i64); 2]> {
        let d = self.system.domain();
        self.system
            .agents()
            .iter()
            .map(|a| {
                let mut out = [(0, 0); 2];
                for (c, slot) in out.iter_mut().enumerate() {
                    let scaled = |q: i64| {
                        let mut p = [0i64; 2];
                        p[c] = q;
                        let mut mu = [0.0; 2];
                        mu[c] = a.goal[c];
                        diffusion_scale(p, self.n, mu)[c]
                    };
                    let guess = |x: f64| nominal_reconstruction([x, x], self.n, [a.goal[c]; 2])[0];
                    let mut lo = guess(d.lower()[c]).ceil() as i64;
                    while scaled(lo) < d.lower()[c] {
                        lo += 1;
                    }
                    while scaled(lo - 1) >= d.lower()[c] {
                        lo -= 1;
                    }
                    let mut hi = guess(d.upper()[c]).floor() as i64;
                    while scaled(hi) > d.upper()[c] {
                        hi -= 1;
                    }
                    while scaled(hi + 1) <= d.upper()[c] {
                        hi += 1;
                    }
                    *slot = (lo, hi);
                }
                out
            })
            .collect()
    }

    /// Rounded initial lattice states, pulled onto the lattice box if rounding
    /// crossed a face.
    pub fn initial_lattice(&self) -> Vec<Lattice> {
        let bounds = self.lattice_bounds();
        self.system
            .agents()
            .iter()
            .zip(&bounds)
            .map(|(a, b)| {
                let q = nominal_reconstruction(a.start, self.n, a.goal);
                [
                    (q[0].round() as i64).clamp(b[0].0, b[0].1),
                    (q[1].round() as i64).clamp(b[1].0, b[1].1),
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueueDiagnostics {
    pub events: u64,
    /// Times the total rate vanished and the state was held to the next grid time.
    pub stalls: u64,
    /// Rate evaluations where the birth or death rate clamped at zero.
    pub clamped_rates: u64,
    /// Sampled states outside the closed box (zero by construction).
    pub violations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueRealization {
    /// Event times, starting with 0 for the initial state.
    pub event_times: Vec<f64>,
    /// All agents' lattice states after each event.
    pub lattice_states: Vec<Vec<Lattice>>,
    /// Scaled state per agent on the output grid.
    pub scaled: Vec<SampledPath>,
    /// Reflection compensator per agent on the output grid.
    pub regulator: Vec<SampledPath>,
    pub diagnostics: QueueDiagnostics,
}

/// Exact simulation of the chain, recording every event.
pub fn simulate_queue_ctmc(config: &QueueConfig, seed: NoiseSeed) -> QueueRealization {
    run_chain(config, seed, true)
}

/// Same chain, without the event log.
pub(crate) fn simulate_queue_sampled(config: &QueueConfig, seed: NoiseSeed) -> QueueRealization {
    run_chain(config, seed, false)
}

fn run_chain(config: &QueueConfig, seed: NoiseSeed, keep_events: bool) -> QueueRealization {
    let system = &config.system;
    let n = config.n;
    let n_agents = system.len();
    let sqrt_n = f64::from(n).sqrt();
    let bounds = config.lattice_bounds();
    let grid = &config.grid;
    let domain = system.domain();

    let mut rng = seed.rng();
    let mut q = config.initial_lattice();
    let mut x: Vec<Point> = q
        .iter()
        .zip(system.agents())
        .map(|(q, a)| diffusion_scale(*q, n, a.goal))
        .collect();
    let mut reg: Vec<Point> = vec![[0.0; 2]; n_agents];
    // [up_x, down_x, up_y, down_y]
    let mut rates: Vec<[f64; 4]> = vec![[0.0; 4]; n_agents];
    let mut reg_velocity: Vec<Point> = vec![[0.0; 2]; n_agents];

    let mut scaled: Vec<Vec<f64>> = vec![Vec::with_capacity(2 * grid.len()); n_agents];
    let mut regulator: Vec<Vec<f64>> = vec![Vec::with_capacity(2 * grid.len()); n_agents];
    let mut event_times = vec![];
    let mut lattice_states = vec![];
    if keep_events {
        event_times.push(0.0);
        lattice_states.push(q.clone());
    }
    let mut diag = QueueDiagnostics::default();

    let mut t = 0.0f64;
    let mut gi = 0usize;
    while gi < grid.len() {
        let mut total = 0.0;
        for i in 0..n_agents {
            let agent = &system.agents()[i];
            // States never leave the box, so the penalty term is always zero.
            let b = drift_in_mode(i, &x, system, ReflectionMode::Projection);
            for c in 0..2 {
                if rates_clamp(n, agent.noise, b[c]) {
                    diag.clamped_rates += 1;
                }
                let (up, down) = birth_death_rates(n, agent.noise, b[c]);
                let up_ok = q[i][c] < bounds[i][c].1;
                let down_ok = q[i][c] > bounds[i][c].0;
                rates[i][2 * c] = if up_ok { up } else { 0.0 };
                rates[i][2 * c + 1] = if down_ok { down } else { 0.0 };
                reg_velocity[i][c] =
                    ((if down_ok { 0.0 } else { down }) - (if up_ok { 0.0 } else { up })) / sqrt_n;
                total += rates[i][2 * c] + rates[i][2 * c + 1];
            }
        }

        let next_t = if total > 0.0 {
            let e: f64 = Exp1.sample(&mut rng);
            t + e / total
        } else {
            diag.stalls += 1;
            // Hold through the next grid time.
            grid[gi]
        };

        while gi < grid.len() && (grid[gi] < next_t || (total <= 0.0 && grid[gi] <= next_t)) {
            let h = grid[gi] - t;
            for i in 0..n_agents {
                if !domain.contains(&x[i]) {
                    diag.violations += 1;
                }
                scaled[i].extend_from_slice(&x[i]);
                regulator[i].push(reg[i][0] + reg_velocity[i][0] * h);
                regulator[i].push(reg[i][1] + reg_velocity[i][1] * h);
            }
            gi += 1;
        }
        if gi == grid.len() {
            break;
        }

        let h = next_t - t;
        for i in 0..n_agents {
            reg[i][0] += reg_velocity[i][0] * h;
            reg[i][1] += reg_velocity[i][1] * h;
        }
        t = next_t;
        if total <= 0.0 {
            continue;
        }

        let mut u = rng.random::<f64>() * total;
        let mut chosen = None;
        'pick: for (i, r) in rates.iter().enumerate() {
            for (m, &rate) in r.iter().enumerate() {
                if rate > 0.0 {
                    chosen = Some((i, m));
                    if u < rate {
                        break 'pick;
                    }
                    u -= rate;
                }
            }
        }
        // Rounding can leave u just past the last bucket; the last positive move wins.
        let (i, m) = chosen.expect("positive total rate has a positive move");
        let c = m / 2;
        q[i][c] += if m % 2 == 0 { 1 } else { -1 };
        x[i] = diffusion_scale(q[i], n, system.agents()[i].goal);
        diag.events += 1;
        if keep_events {
            event_times.push(t);
            lattice_states.push(q.clone());
        }
    }

    let wrap = |rows: Vec<Vec<f64>>| -> Vec<SampledPath> {
        rows.into_iter()
            .map(|d| SampledPath::from_parts(grid.clone(), 2, d))
            .collect()
    };
    QueueRealization {
        event_times,
        lattice_states,
        scaled: wrap(scaled),
        regulator: wrap(regulator),
        diagnostics: diag,
    }
}
