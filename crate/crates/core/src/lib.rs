//! Physics-verified cluttered scene generation.
//!
//! A placement agent proposes poses for objects one at a time inside a
//! queried region of a tabletop; every proposal is released into a
//! rigid-body simulation and judged by a velocity/acceleration stability
//! criterion. The crate contains the simulator, scene model, observation
//! builder, a small actor-critic network with Beta and truncated-normal
//! heads, a PPO trainer, the generation environment, baselines and
//! evaluation, and a supervised placement distillation pipeline.

pub mod distill;
pub mod env;
pub mod error;
pub mod eval;
pub mod observation;
pub mod physics;
pub mod policy;
pub mod ppo;
pub mod scene;

pub use error::{Error, Result};
