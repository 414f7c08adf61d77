//! Experiment configuration files and the two built-in presets.
//!
//! A configuration is a JSON document:
//!
//! ```json
//! {
//!   "agents": [{"goal": [1.25, 0.0], "gain": 3.0, "noise": 0.5, "start": [0.75, 0.75]}],
//!   "box": {"lower": [0.0, 0.0], "upper": [2.5, 2.5]},
//!   "repulsion": {"strength": 0.1, "softening": 0.01, "sign": "repulsive"},
//!   "sim": {"dt": 0.001, "horizon": 2.0, "reflection_mode": "projection",
//!           "penalty_gain": 50.0, "grid_points": 201},
//!   "queue": {"n": [50, 200, 800]},
//!   "ensemble": {"runs": 1000, "seed": 42, "mse": "means"}
//! }
//! ```
//!
//! Everything except `agents` and `box` has a default.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{ExperimentPlan, MseKind, DEFAULT_GRID_POINTS};
use crate::model::{
    AgentSpec, DomainBox, Interaction, ReflectionMode, RepulsionSpec, SystemSpec,
    DEFAULT_PENALTY_GAIN,
};
use crate::sde::DEFAULT_DT;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}")]
    Invalid(#[from] crate::Error),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown preset `{0}` (expected `crowd`, `neural`, or a path to a JSON file)")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub reflection_mode: ReflectionMode,
    #[serde(default = "default_penalty_gain")]
    pub penalty_gain: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            dt: DEFAULT_DT,
            horizon: default_horizon(),
            reflection_mode: ReflectionMode::Projection,
            penalty_gain: DEFAULT_PENALTY_GAIN,
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueSection {
    #[serde(default = "default_n_values")]
    pub n: Vec<u32>,
}

impl Default for QueueSection {
    fn default() -> Self {
        QueueSection {
            n: default_n_values(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub mse: MseKind,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            runs: default_runs(),
            seed: default_seed(),
            mse: MseKind::Means,
        }
    }
}

fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_horizon() -> f64 {
    2.0
}
fn default_penalty_gain() -> f64 {
    DEFAULT_PENALTY_GAIN
}
fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}
fn default_n_values() -> Vec<u32> {
    vec![50, 200, 800]
}
fn default_runs() -> usize {
    1000
}
fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub agents: Vec<AgentSpec>,
    #[serde(rename = "box")]
    pub domain: DomainBox,
    #[serde(default)]
    pub repulsion: RepulsionSpec,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub queue: QueueSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
}

impl ExperimentConfig {
    /// Three agents heading for an exit at the middle of the bottom wall of
    /// `[0, 2.5]²`.
    pub fn crowd() -> Self {
        let exit = [1.25, 0.0];
        let agents = [[0.75, 0.75], [1.75, 1.75], [1.25, 0.25]]
            .into_iter()
            .map(|s| AgentSpec::new(exit, 3.0, 0.5, s))
            .collect();
        ExperimentConfig {
            agents,
            domain: DomainBox::square(0.0, 2.5).expect("valid square"),
            repulsion: RepulsionSpec::default(),
            sim: SimSection::default(),
            queue: QueueSection::default(),
            ensemble: EnsembleSection::default(),
        }
    }

    /// Five mutually inhibiting populations in `[0, 5]²` drawn to a common
    /// stimulus at `(2.5, 0)`.
    pub fn neural() -> Self {
        let stimulus = [2.5, 0.0];
        let agents = [[1.0, 1.0], [2.0, 4.0], [3.5, 1.5], [4.5, 3.0], [2.5, 2.5]]
            .into_iter()
            .map(|s| AgentSpec::new(stimulus, 3.0, 0.5, s))
            .collect();
        ExperimentConfig {
            agents,
            domain: DomainBox::square(0.0, 5.0).expect("valid square"),
            repulsion: RepulsionSpec {
                sign: Interaction::Inhibitory,
                ..RepulsionSpec::default()
            },
            sim: SimSection::default(),
            queue: QueueSection::default(),
            ensemble: EnsembleSection::default(),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "crowd" => Some(Self::crowd()),
            "neural" => Some(Self::neural()),
            _ => None,
        }
    }

    /// A preset name or a path to a JSON file.
    pub fn resolve(source: &str) -> Result<Self, ConfigError> {
        if let Some(c) = Self::preset(source) {
            return Ok(c);
        }
        let path = std::path::Path::new(source);
        if !path.exists() {
            return Err(ConfigError::UnknownPreset(source.to_string()));
        }
        let text = std::fs::read_to_string(path).map_err(|source_err| ConfigError::Io {
            path: source.to_string(),
            source: source_err,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.system()?;
        if self.sim.grid_points < 2 {
            return Err(crate::Error::param("sim.grid_points", "at least 2 points").into());
        }
        if self.queue.n.contains(&0) {
            return Err(crate::Error::param("queue.n", "scales must be positive").into());
        }
        if self.ensemble.runs == 0 {
            return Err(crate::Error::param("ensemble.runs", "must be positive").into());
        }
        crate::sde::SimConfig::for_system(&self.system()?, self.sim.dt)?;
        Ok(())
    }

    pub fn system(&self) -> crate::Result<SystemSpec> {
        SystemSpec::new(
            self.agents.clone(),
            self.domain.clone(),
            self.repulsion,
            self.sim.horizon,
            self.sim.reflection_mode,
            self.sim.penalty_gain,
        )
    }

    pub fn plan(&self) -> crate::Result<ExperimentPlan> {
        Ok(ExperimentPlan {
            system: self.system()?,
            dt: self.sim.dt,
            grid_points: self.sim.grid_points,
            n_values: self.queue.n.clone(),
            runs: self.ensemble.runs,
            seed: self.ensemble.seed,
            mse_kind: self.ensemble.mse,
        })
    }

    /// Canonical JSON of the resolved configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical JSON, so key order in the source file is irrelevant.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}
