//! Rollout storage and generalized advantage estimation.

use ndarray::Array2;

use crate::env::TerminationReason;

/// Transitions of `n_envs` environments over `rollout_len` steps, stored
/// env-major: row `e * rollout_len + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub rollout_len: usize,
    pub observations: Array2<f64>,
    /// Actions in the policy's likelihood space.
    pub actions: Array2<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// The episode ended with this transition.
    pub dones: Vec<bool>,
    pub reasons: Vec<Option<TerminationReason>>,
    /// V of each env's state after the last step, for bootstrapping.
    pub last_values: Vec<f64>,
    pub advantages: Option<Vec<f64>>,
    pub returns: Option<Vec<f64>>,
}

impl RolloutBuffer {
    pub fn new(n_envs: usize, rollout_len: usize, obs_dim: usize, act_dim: usize) -> Self {
        let n = n_envs * rollout_len;
        Self {
            n_envs,
            rollout_len,
            observations: Array2::zeros((n, obs_dim)),
            actions: Array2::zeros((n, act_dim)),
            log_probs: vec![0.0; n],
            rewards: vec![0.0; n],
            values: vec![0.0; n],
            dones: vec![false; n],
            reasons: vec![None; n],
            last_values: vec![0.0; n_envs],
            advantages: None,
            returns: None,
        }
    }

    pub fn len(&self) -> usize {
        self.n_envs * self.rollout_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, env: usize, t: usize) -> usize {
        env * self.rollout_len + t
    }

    #[allow(clippy::too_many_arguments)]
    pub fn store(
        &mut self,
        env: usize,
        t: usize,
        observation: &[f64],
        action: &[f64],
        log_prob: f64,
        reward: f64,
        value: f64,
        reason: Option<TerminationReason>,
    ) {
        let i = self.index(env, t);
        self.observations.row_mut(i).iter_mut().zip(observation).for_each(|(d, s)| *d = *s);
        self.actions.row_mut(i).iter_mut().zip(action).for_each(|(d, s)| *d = *s);
        self.log_probs[i] = log_prob;
        self.rewards[i] = reward;
        self.values[i] = value;
        self.dones[i] = reason.is_some();
        self.reasons[i] = reason;
    }

    /// Fills advantages and returns (`returns = advantages + values`).
    pub fn compute_gae(&mut self, gamma: f64, lambda: f64) {
        let mut adv = vec![0.0; self.len()];
        for e in 0..self.n_envs {
            let r = e * self.rollout_len..(e + 1) * self.rollout_len;
            let a = gae(
                &self.rewards[r.clone()],
                &self.values[r.clone()],
                &self.dones[r.clone()],
                self.last_values[e],
                gamma,
                lambda,
            );
            adv[r].copy_from_slice(&a);
        }
        self.returns = Some(adv.iter().zip(&self.values).map(|(a, v)| a + v).collect());
        self.advantages = Some(adv);
    }

    /// Content hash over everything collected (not the derived fields).
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in self
            .observations
            .iter()
            .chain(self.actions.iter())
            .chain(&self.log_probs)
            .chain(&self.rewards)
            .chain(&self.values)
            .chain(&self.last_values)
        {
            h.update(v.to_le_bytes());
        }
        for d in &self.dones {
            h.update([u8::from(*d)]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// GAE over one environment's trajectory segment.
///
/// `dones[t]` marks that the episode ended with transition `t`;
/// `last_value` is V of the state following the final transition.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next_value * not_done - values[t];
        next_adv = delta + gamma * lambda * not_done * next_adv;
        adv[t] = next_adv;
    }
    adv
}

/// Shifts to zero mean and scales to unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-12;
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_terminal_step() {
        let a = gae(&[1.0], &[0.0], &[true], 5.0, 0.99, 0.95);
        assert_eq!(a, vec![1.0]);
    }

    #[test]
    fn myopic_limit() {
        let r = [0.3, -1.0, 2.0];
        let v = [0.1, 0.5, -0.2];
        let a = gae(&r, &v, &[false, false, false], 3.0, 0.0, 0.95);
        for t in 0..3 {
            assert_eq!(a[t], r[t] - v[t]);
        }
    }

    #[test]
    fn shape_and_returns() {
        let mut b = RolloutBuffer::new(2, 3, 4, 2);
        assert_eq!(b.len(), 6);
        assert_eq!(b.index(1, 0), 3);
        for e in 0..2 {
            for t in 0..3 {
                b.store(e, t, &[0.0; 4], &[0.5, 0.5], 0.0, 1.0, 0.25, None);
            }
        }
        b.compute_gae(0.9, 0.8);
        let (a, r) = (b.advantages.as_ref().unwrap(), b.returns.as_ref().unwrap());
        for i in 0..6 {
            assert!((r[i] - a[i] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn normalization() {
        let mut a = vec![1.0, 2.0, 3.0, 10.0];
        normalize_advantages(&mut a);
        let mean: f64 = a.iter().sum::<f64>() / 4.0;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((std - 1.0).abs() < 1e-9);
    }
}
