//! PPO / mPPO training: rollouts, GAE, clipped-surrogate updates, metrics and
//! checkpoints.

pub mod adam;
pub mod buffer;
pub mod curves;
pub mod ppo;
pub mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::network::HeadKind;
use adam::AdamConfig;

pub use trainer::{TrainMetrics, Trainer};

/// The two supported algorithm presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    /// Beta head with perturbed sampling.
    Mppo,
    /// Gaussian head, plain PPO.
    Ppo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Policy transitions to train for, summed over environments.
    pub total_steps: u64,
    pub n_envs: usize,
    /// Policy transitions per environment between updates.
    pub rollout_len: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub clip_ratio: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Multiplier on rewards before GAE and the value loss.
    pub reward_scale: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub distribution: HeadKind,
    pub rpo_enabled: bool,
    pub rpo_epsilon: f64,
    pub hidden: Vec<usize>,
    /// Initial σ of the Gaussian head, in units where [−1, 1] spans the bounds.
    pub initial_std: f64,
    pub adam: AdamConfig,
    /// Write a checkpoint every this many updates (0: only at the end).
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 500_000_000,
            n_envs: 42,
            rollout_len: 1000,
            learning_rate: 3e-4,
            epochs: 30,
            minibatch_size: 4096,
            clip_ratio: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            reward_scale: 1.0,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            distribution: HeadKind::Beta,
            rpo_enabled: true,
            rpo_epsilon: 0.1,
            hidden: vec![256; 4],
            initial_std: 0.5,
            adam: AdamConfig::default(),
            checkpoint_interval: 10,
        }
    }
}

impl TrainConfig {
    pub fn apply_algo(&mut self, algo: Algo) {
        match algo {
            Algo::Mppo => {
                self.distribution = HeadKind::Beta;
                self.rpo_enabled = true;
            }
            Algo::Ppo => {
                self.distribution = HeadKind::Gaussian;
                self.rpo_enabled = false;
            }
        }
    }

    pub fn effective_rpo_epsilon(&self) -> f64 {
        if self.rpo_enabled {
            self.rpo_epsilon
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("train.{key}"), "must be positive"))
            }
        };
        positive("n_envs", self.n_envs > 0)?;
        positive("rollout_len", self.rollout_len > 0)?;
        positive("epochs", self.epochs > 0)?;
        positive("minibatch_size", self.minibatch_size > 0)?;
        positive("learning_rate", self.learning_rate > 0.0)?;
        positive("clip_ratio", self.clip_ratio > 0.0)?;
        positive("max_grad_norm", self.max_grad_norm > 0.0)?;
        positive("initial_std", self.initial_std > 0.0)?;
        positive("total_steps", self.total_steps > 0)?;
        positive("reward_scale", self.reward_scale > 0.0 && self.reward_scale.is_finite())?;
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("train.gamma", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::config("train.gae_lambda", "must lie in [0, 1]"));
        }
        if self.rpo_enabled && self.distribution != HeadKind::Beta {
            return Err(Error::config("train.rpo_enabled", "perturbation requires the beta distribution"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("train.hidden", "need at least one positive layer width"));
        }
        Ok(())
    }
}
