//! Controlled birth–death queueing networks and their reflected
//! Ornstein–Uhlenbeck diffusion limit.
//!
//! The crate simulates both sides of the limit and measures how close they
//! are:
//!
//! - [`model`]: agents, the box domain, and the drift fields.
//! - [`skorokhod`]: discrete Skorokhod maps and their property checks.
//! - [`sde`]: reflected Euler–Maruyama for the interacting OU system.
//! - [`queue`]: exact simulation of the scale-`n` queueing chain.
//! - [`fclt`]: the Poisson net-input functional CLT.
//! - [`analysis`]: matched ensembles, MSE curves, and rate fits.
//! - [`cli`]: configuration, presets, and the `reflow` command line.
//!
//! The guide in `book/` walks through each piece; its code samples are
//! compiled and run as doctests of this crate.

// NaN must fail validation, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod fclt;
pub mod model;
pub mod queue;
pub mod sde;
pub mod seed;
pub mod skorokhod;

pub use error::{Error, Result};
pub use model::{AgentSpec, DomainBox, Point, ReflectionMode, RepulsionSpec, SystemSpec};
pub use seed::NoiseSeed;
pub use skorokhod::{ReflectedPair, SampledPath};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/skorokhod.md")]
    mod skorokhod {}
    #[doc = include_str!("../../../book/src/limit.md")]
    mod limit {}
    #[doc = include_str!("../../../book/src/queue.md")]
    mod queue {}
    #[doc = include_str!("../../../book/src/fclt.md")]
    mod fclt {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
