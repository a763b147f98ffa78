//! Actor-critic policy with a Beta (mPPO) or Gaussian (PPO) action head.
//!
//! Beta actions live in [0, 1] per dimension and map linearly onto the
//! physical bounds. Gaussian actions live in the unbounded space where
//! [−1, 1] spans the bounds; they are stored unclipped for the likelihood and
//! clipped only when turned into a command.

pub mod checkpoint;
pub mod dist;
pub mod network;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use dist::{
    beta_entropy_grad, beta_entropy_unchecked, beta_log_prob_grad, beta_log_prob_unchecked,
    beta_sample, gaussian_entropy, gaussian_log_prob_grad, gaussian_log_prob_unchecked,
    gaussian_sample, rpo_perturb, ActionBounds,
};
use network::{beta_params, row_vec, sigmoid, softplus, ActorCritic, HeadKind};

/// How actions are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    /// Sample (and perturb, if enabled) for training.
    Explore,
    /// Distribution mean, no perturbation.
    Deterministic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActOutput {
    /// Action in the space the likelihood is defined on.
    pub stored: Vec<f64>,
    /// Physical command inside the action bounds.
    pub command: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

/// A network plus the action-space conventions around it.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub net: ActorCritic,
    pub bounds: ActionBounds,
    /// Half-width of the uniform perturbation added to sampled Beta actions;
    /// zero disables it.
    pub rpo_epsilon: f64,
}

impl Policy {
    pub fn new(net: ActorCritic, bounds: ActionBounds, rpo_epsilon: f64) -> Result<Self> {
        if bounds.dim() != net.shape.actions {
            return Err(Error::config(
                "action_bounds",
                format!("{} bounds for {} actions", bounds.dim(), net.shape.actions),
            ));
        }
        if rpo_epsilon > 0.0 && net.shape.head != HeadKind::Beta {
            return Err(Error::config("train.rpo_epsilon", "perturbation requires the Beta head"));
        }
        if !(0.0..=1.0).contains(&rpo_epsilon) {
            return Err(Error::config("train.rpo_epsilon", "must lie in [0, 1]"));
        }
        Ok(Self {
            net,
            bounds,
            rpo_epsilon,
        })
    }

    pub fn head(&self) -> HeadKind {
        self.net.shape.head
    }

    pub fn actions(&self) -> usize {
        self.net.shape.actions
    }

    /// Maps a stored action onto a physical command.
    pub fn command_for(&self, stored: &[f64]) -> Vec<f64> {
        match self.head() {
            HeadKind::Beta => self.bounds.denormalize(stored),
            HeadKind::Gaussian => {
                let unit: Vec<f64> = stored.iter().map(|u| 0.5 * (u.clamp(-1.0, 1.0) + 1.0)).collect();
                self.bounds.denormalize(&unit)
            }
        }
    }

    /// Acts on a batch of feature rows.
    pub fn act<R: Rng + ?Sized>(&self, features: &Array2<f64>, mode: ActMode, rng: &mut R) -> Result<Vec<ActOutput>> {
        let cache = self.net.forward(features.view())?;
        let k = self.actions();
        let log_std = self.net.log_std().map(|p| p.row(0).to_vec());
        let mut out = Vec::with_capacity(features.nrows());
        for i in 0..features.nrows() {
            let head = row_vec(&cache.head, i);
            let stored: Vec<f64> = match (self.head(), mode) {
                (HeadKind::Beta, ActMode::Deterministic) => {
                    let (a, b) = beta_params(&head, k);
                    a.iter().zip(&b).map(|(a, b)| a / (a + b)).collect()
                }
                (HeadKind::Beta, ActMode::Explore) => {
                    let (a, b) = beta_params(&head, k);
                    let mut v = Vec::with_capacity(k);
                    for d in 0..k {
                        let x = beta_sample(a[d], b[d], rng)?;
                        v.push(rpo_perturb(x, self.rpo_epsilon, rng));
                    }
                    v
                }
                (HeadKind::Gaussian, ActMode::Deterministic) => head.clone(),
                (HeadKind::Gaussian, ActMode::Explore) => {
                    let ls = log_std.as_ref().expect("gaussian head without log std");
                    let mut v = Vec::with_capacity(k);
                    for d in 0..k {
                        v.push(gaussian_sample(head[d], ls[d].exp(), rng)?);
                    }
                    v
                }
            };
            let eval = evaluate_head(self.head(), &head, log_std.as_deref(), &stored);
            out.push(ActOutput {
                command: self.command_for(&stored),
                stored,
                log_prob: eval.log_prob,
                value: cache.value[i],
            });
        }
        Ok(out)
    }

    /// State values for a batch of feature rows.
    pub fn values(&self, features: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self.net.forward(features.view())?.value.to_vec())
    }
}

/// Log-density, entropy and their derivatives for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadEval {
    pub log_prob: f64,
    pub entropy: f64,
    /// ∂ log π / ∂ raw head outputs.
    pub d_log_prob: Vec<f64>,
    /// ∂ H / ∂ raw head outputs.
    pub d_entropy: Vec<f64>,
    /// ∂ log π / ∂ ln σ (Gaussian); ∂ H / ∂ ln σ is one per dimension.
    pub d_log_prob_log_std: Vec<f64>,
}

pub fn evaluate_head(kind: HeadKind, head: &[f64], log_std: Option<&[f64]>, action: &[f64]) -> HeadEval {
    let k = action.len();
    match kind {
        HeadKind::Beta => {
            let mut e = HeadEval {
                log_prob: 0.0,
                entropy: 0.0,
                d_log_prob: vec![0.0; 2 * k],
                d_entropy: vec![0.0; 2 * k],
                d_log_prob_log_std: Vec::new(),
            };
            for d in 0..k {
                let (ra, rb) = (head[d], head[k + d]);
                let (alpha, beta) = (1.0 + softplus(ra), 1.0 + softplus(rb));
                let (sa, sb) = (sigmoid(ra), sigmoid(rb));
                e.log_prob += beta_log_prob_unchecked(action[d], alpha, beta);
                e.entropy += beta_entropy_unchecked(alpha, beta);
                let (ga, gb, _) = beta_log_prob_grad(action[d], alpha, beta);
                e.d_log_prob[d] = ga * sa;
                e.d_log_prob[k + d] = gb * sb;
                let (ha, hb) = beta_entropy_grad(alpha, beta);
                e.d_entropy[d] = ha * sa;
                e.d_entropy[k + d] = hb * sb;
            }
            e
        }
        HeadKind::Gaussian => {
            let ls = log_std.expect("gaussian head without log std");
            let mut e = HeadEval {
                log_prob: 0.0,
                entropy: 0.0,
                d_log_prob: vec![0.0; k],
                d_entropy: vec![0.0; k],
                d_log_prob_log_std: vec![0.0; k],
            };
            for d in 0..k {
                e.log_prob += gaussian_log_prob_unchecked(action[d], head[d], ls[d]);
                e.entropy += gaussian_entropy(ls[d]);
                let (gm, gs) = gaussian_log_prob_grad(action[d], head[d], ls[d]);
                e.d_log_prob[d] = gm;
                e.d_log_prob_log_std[d] = gs;
            }
            e
        }
    }
}
