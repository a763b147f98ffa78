//! Simulation and reinforcement-learning stack for grasping wood logs with
//! a hydraulic forestry crane.
//!
//! * [`kinematics`]: Denavit-Hartenberg forward kinematics of the 8-DoF crane.
//! * [`sim`]: velocity-tracking joints, swinging grapple, geometric grasping.
//! * [`env`]: observations, shaped reward, termination and pose noise.
//! * [`policy`]: actor-critic network with Beta and Gaussian action heads.
//! * [`train`]: rollouts, GAE and the clipped PPO update.
//! * [`eval`]: Monte Carlo success-rate evaluation.
//! * [`config`]: the TOML run configuration.

// Validation uses `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod env;
pub mod eval;
pub mod error;
pub mod kinematics;
pub mod policy;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
