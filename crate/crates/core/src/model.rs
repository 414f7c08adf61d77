//! Domain types and deterministic force fields shared by both engines.
//!
//! Every agent lives in the same axis-aligned box. Its drift is the
//! mean-reverting pull `θ_i (μ_i - x_i)` plus the softened pairwise kernel
//!
//! ```text
//! F(x_i, x_j) = k (x_i - x_j) / (|x_i - x_j|^2 + ε)^(3/2)
//! ```
//!
//! which is bounded and globally Lipschitz for any `ε > 0`. In penalty mode a
//! linear restoring drift is added outside the box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the plane.
pub type Point = [f64; 2];

/// Axis-aligned box `[lower_0, upper_0] x ... x [lower_{d-1}, upper_{d-1}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxBounds", into = "BoxBounds")]
pub struct DomainBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<BoxBounds> for DomainBox {
    type Error = Error;
    fn try_from(b: BoxBounds) -> Result<Self> {
        DomainBox::new(b.lower, b.upper)
    }
}

impl From<DomainBox> for BoxBounds {
    fn from(b: DomainBox) -> Self {
        BoxBounds {
            lower: b.lower,
            upper: b.upper,
        }
    }
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidBox("dimension must be positive".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::InvalidBox(format!(
                "bound lengths differ ({} vs {})",
                lower.len(),
                upper.len()
            )));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            // NaN fails this comparison as well.
            if !(lo < hi) {
                return Err(Error::InvalidBox(format!(
                    "coordinate {k}: lower {lo} must be below upper {hi}"
                )));
            }
        }
        Ok(DomainBox { lower, upper })
    }

    /// The square `[lo, hi]^2`.
    pub fn square(lo: f64, hi: f64) -> Result<Self> {
        DomainBox::new(vec![lo, lo], vec![hi, hi])
    }

    /// `[0, ∞)` in one dimension.
    pub fn half_line() -> Self {
        DomainBox {
            lower: vec![0.0],
            upper: vec![f64::INFINITY],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Membership in the closed box, without tolerance.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    /// Componentwise projection onto the closed box, in place.
    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Whether coordinate `k` of `x` is within `tol` of either face.
    pub fn on_face(&self, x: &[f64], k: usize, tol: f64) -> bool {
        (x[k] - self.lower[k]).abs() <= tol || (x[k] - self.upper[k]).abs() <= tol
    }

    pub(crate) fn corners2(&self) -> [Point; 4] {
        let (l, u) = (&self.lower, &self.upper);
        [[l[0], l[1]], [l[0], u[1]], [u[0], l[1]], [u[0], u[1]]]
    }
}

/// Per-agent parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    /// Goal point `μ_i`; also the centering point of the queue lattice.
    pub goal: Point,
    /// Mean-reversion gain `θ_i`.
    pub gain: f64,
    /// Noise scale `σ_i`.
    pub noise: f64,
    /// Initial state.
    pub start: Point,
}

impl AgentSpec {
    pub fn new(goal: Point, gain: f64, noise: f64, start: Point) -> Self {
        AgentSpec {
            goal,
            gain,
            noise,
            start,
        }
    }

    fn validate(&self, index: usize, domain: &DomainBox) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidAgent { index, reason });
        if !(self.gain > 0.0) || !self.gain.is_finite() {
            return bad(format!("gain must be positive, got {}", self.gain));
        }
        // Zero noise is accepted so that deterministic reductions can be run.
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad(format!("noise must be nonnegative, got {}", self.noise));
        }
        if !domain.contains(&self.start) {
            return bad(format!("start {:?} lies outside the box", self.start));
        }
        if !domain.contains(&self.goal) {
            return bad(format!("goal {:?} lies outside the box", self.goal));
        }
        Ok(())
    }
}

/// Interpretation of the pairwise kernel. Both use the same formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interaction {
    #[default]
    Repulsive,
    Inhibitory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepulsionSpec {
    pub strength: f64,
    pub softening: f64,
    #[serde(default)]
    pub sign: Interaction,
}

impl Default for RepulsionSpec {
    fn default() -> Self {
        RepulsionSpec {
            strength: 0.1,
            softening: 0.01,
            sign: Interaction::Repulsive,
        }
    }
}

impl RepulsionSpec {
    pub fn none() -> Self {
        RepulsionSpec {
            strength: 0.0,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.strength >= 0.0) || !self.strength.is_finite() {
            return Err(Error::param("repulsion.strength", "must be nonnegative"));
        }
        if !(self.softening > 0.0) || !self.softening.is_finite() {
            return Err(Error::param("repulsion.softening", "must be positive"));
        }
        Ok(())
    }

    /// Largest force magnitude over all pairs, attained at distance `√(ε/2)`.
    pub fn max_magnitude(&self) -> f64 {
        let eps = self.softening;
        let d = (eps / 2.0).sqrt();
        self.strength * d / (d * d + eps).powf(1.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReflectionMode {
    /// Clamp onto the box after every step.
    #[default]
    Projection,
    /// Linear restoring drift outside the box, no clamp.
    Penalty,
}

/// A complete interacting system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    agents: Vec<AgentSpec>,
    domain: DomainBox,
    repulsion: RepulsionSpec,
    horizon: f64,
    reflection_mode: ReflectionMode,
    penalty_gain: f64,
}

impl SystemSpec {
    pub fn new(
        agents: Vec<AgentSpec>,
        domain: DomainBox,
        repulsion: RepulsionSpec,
        horizon: f64,
        reflection_mode: ReflectionMode,
        penalty_gain: f64,
    ) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::param("agents", "at least one agent is required"));
        }
        if domain.dim() != 2 {
            return Err(Error::InvalidBox(format!(
                "agents move in the plane; box has dimension {}",
                domain.dim()
            )));
        }
        for (i, a) in agents.iter().enumerate() {
            a.validate(i, &domain)?;
        }
        repulsion.validate()?;
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::param("horizon", "must be positive"));
        }
        if !(penalty_gain >= 0.0) || !penalty_gain.is_finite() {
            return Err(Error::param("penalty_gain", "must be nonnegative"));
        }
        if reflection_mode == ReflectionMode::Penalty && penalty_gain <= 0.0 {
            return Err(Error::param(
                "penalty_gain",
                "must be positive in penalty mode",
            ));
        }
        Ok(SystemSpec {
            agents,
            domain,
            repulsion,
            horizon,
            reflection_mode,
            penalty_gain,
        })
    }

    pub fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn repulsion(&self) -> &RepulsionSpec {
        &self.repulsion
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn reflection_mode(&self) -> ReflectionMode {
        self.reflection_mode
    }

    pub fn penalty_gain(&self) -> f64 {
        self.penalty_gain
    }

    /// Same system with a different reflection mechanism.
    pub fn with_reflection(&self, mode: ReflectionMode) -> Result<Self> {
        let mut gain = self.penalty_gain;
        if mode == ReflectionMode::Penalty && gain <= 0.0 {
            gain = DEFAULT_PENALTY_GAIN;
        }
        SystemSpec::new(
            self.agents.clone(),
            self.domain.clone(),
            self.repulsion,
            self.horizon,
            mode,
            gain,
        )
    }

    pub fn starts(&self) -> Vec<Point> {
        self.agents.iter().map(|a| a.start).collect()
    }

    /// Upper bound on `sup |b_i|` over the box, excluding the penalty term.
    pub fn drift_bound(&self, i: usize) -> f64 {
        let a = &self.agents[i];
        let pull = self
            .domain
            .corners2()
            .iter()
            .map(|c| a.gain * norm(sub(a.goal, *c)))
            .fold(0.0, f64::max);
        pull + (self.len() - 1) as f64 * self.repulsion.max_magnitude()
    }
}

pub const DEFAULT_PENALTY_GAIN: f64 = 50.0;

#[inline]
pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub(crate) fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

/// Softened inverse-square force exerted on `x_i` by `x_j`.
#[inline]
pub fn repulsion_force(x_i: Point, x_j: Point, spec: &RepulsionSpec) -> Point {
    let d = sub(x_i, x_j);
    let r2 = d[0] * d[0] + d[1] * d[1];
    let scale = spec.strength / (r2 + spec.softening).powf(1.5);
    [scale * d[0], scale * d[1]]
}

/// Restoring drift `κ·overshoot` pointing back into the box; zero inside.
pub fn penalty_reflection_drift(x: &[f64], domain: &DomainBox, kappa: f64) -> Vec<f64> {
    x.iter()
        .zip(domain.lower().iter().zip(domain.upper()))
        .map(|(v, (lo, hi))| kappa * (lo - v).max(0.0) - kappa * (v - hi).max(0.0))
        .collect()
}

/// Drift of agent `i` given all current states, using the system's own
/// reflection mode.
///
/// Panics if `i` is out of range or `states` has the wrong length.
pub fn drift(i: usize, states: &[Point], system: &SystemSpec) -> Point {
    drift_in_mode(i, states, system, system.reflection_mode)
}

pub(crate) fn drift_in_mode(
    i: usize,
    states: &[Point],
    system: &SystemSpec,
    mode: ReflectionMode,
) -> Point {
    assert_eq!(states.len(), system.len(), "expected one state per agent");
    let agent = &system.agents[i];
    let x = states[i];
    let mut b = [
        agent.gain * (agent.goal[0] - x[0]),
        agent.gain * (agent.goal[1] - x[1]),
    ];
    if system.repulsion.strength > 0.0 {
        for (j, xj) in states.iter().enumerate() {
            if j != i {
                let f = repulsion_force(x, *xj, &system.repulsion);
                b[0] += f[0];
                b[1] += f[1];
            }
        }
    }
    if mode == ReflectionMode::Penalty {
        let p = penalty_reflection_drift(&x, &system.domain, system.penalty_gain);
        b[0] += p[0];
        b[1] += p[1];
    }
    b
}
