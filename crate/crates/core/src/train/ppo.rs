//! Clipped-surrogate PPO loss with value and entropy terms, its gradient,
//! and the multi-epoch minibatch update.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::policy::network::{row_vec, ActorCritic, HeadKind};
use crate::policy::{evaluate_head, Policy};
use crate::train::adam::{clip_global_norm, Adam};
use crate::train::buffer::{normalize_advantages, RolloutBuffer};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PpoHyper {
    pub clip_ratio: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

/// A minibatch view of training data.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub features: ArrayView2<'a, f64>,
    pub actions: ArrayView2<'a, f64>,
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grads: Vec<Array2<f64>>,
}

/// `L = −mean(min(ρA, clip(ρ, 1±ε)A)) + c_v·mean((V − R)²) − c_e·mean(H)`
/// and its gradient with respect to every network parameter.
pub fn ppo_loss(net: &ActorCritic, batch: &Batch, hyper: &PpoHyper) -> Result<LossOutput> {
    let n = batch.features.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    let nf = n as f64;
    let cache = net.forward(batch.features)?;
    let k = net.shape.actions;
    let log_std = net.log_std().map(|p| p.row(0).to_vec());
    let mut d_head = Array2::zeros(cache.head.raw_dim());
    let mut d_value = Array1::zeros(n);
    let mut d_log_std = Array1::<f64>::zeros(k);
    let (mut policy_loss, mut value_loss, mut entropy) = (0.0, 0.0, 0.0);
    let (mut clipped, mut kl) = (0usize, 0.0);
    let (lo, hi) = (1.0 - hyper.clip_ratio, 1.0 + hyper.clip_ratio);

    for i in 0..n {
        let head = row_vec(&cache.head, i);
        let action: Vec<f64> = batch.actions.row(i).to_vec();
        let e = evaluate_head(net.shape.head, &head, log_std.as_deref(), &action);
        let log_ratio = e.log_prob - batch.old_log_probs[i];
        let ratio = log_ratio.exp();
        let adv = batch.advantages[i];
        let surr1 = ratio * adv;
        let surr2 = ratio.clamp(lo, hi) * adv;
        policy_loss -= surr1.min(surr2) / nf;
        if (ratio - 1.0).abs() > hyper.clip_ratio {
            clipped += 1;
        }
        kl += ((ratio - 1.0) - log_ratio) / nf;
        // The min picks the unclipped branch, or a clipped branch that is
        // flat in ρ.
        let d_logp = if surr1 <= surr2 { -adv * ratio / nf } else { 0.0 };

        for j in 0..head.len() {
            d_head[[i, j]] = d_logp * e.d_log_prob[j] - hyper.entropy_coef / nf * e.d_entropy[j];
        }
        if net.shape.head == HeadKind::Gaussian {
            for d in 0..k {
                d_log_std[d] += d_logp * e.d_log_prob_log_std[d];
            }
        }
        entropy += e.entropy / nf;

        let err = cache.value[i] - batch.returns[i];
        value_loss += err * err / nf;
        d_value[i] = hyper.value_coef * 2.0 * err / nf;
    }
    if net.shape.head == HeadKind::Gaussian {
        d_log_std.mapv_inplace(|g| g - hyper.entropy_coef);
    }
    let loss = policy_loss + hyper.value_coef * value_loss - hyper.entropy_coef * entropy;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {loss}")));
    }
    let grads = net.backward(batch.features, &cache, &d_head, &d_value, Some(&d_log_std));
    Ok(LossOutput {
        loss,
        policy_loss,
        value_loss,
        entropy,
        clip_fraction: clipped as f64 / nf,
        approx_kl: kl,
        grads,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateSettings {
    pub hyper: PpoHyper,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
}

/// Averages over all minibatch steps of one update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub optimizer_steps: u64,
}

/// Runs the PPO epochs over a filled buffer. On a non-finite loss or
/// parameter the policy and optimizer are restored to their state before
/// the call and a numerical error is returned.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut Policy,
    adam: &mut Adam,
    buffer: &RolloutBuffer,
    settings: &UpdateSettings,
    rng: &mut R,
) -> Result<UpdateStats> {
    let mut advantages = buffer
        .advantages
        .clone()
        .ok_or_else(|| Error::InvalidArgument("compute GAE before updating".into()))?;
    let returns = buffer.returns.as_ref().expect("returns come with advantages");
    normalize_advantages(&mut advantages);

    let saved_params = policy.net.params.clone();
    let saved_adam = adam.clone();
    let restore = |policy: &mut Policy, adam: &mut Adam| {
        policy.net.params = saved_params.clone();
        *adam = saved_adam.clone();
    };

    let n = buffer.len();
    let mb = settings.minibatch_size.clamp(1, n.max(1));
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    for _ in 0..settings.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(mb) {
            let features = buffer.observations.select(Axis(0), chunk);
            let actions = buffer.actions.select(Axis(0), chunk);
            let old: Vec<f64> = chunk.iter().map(|&i| buffer.log_probs[i]).collect();
            let adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
            let ret: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();
            let batch = Batch {
                features: features.view(),
                actions: actions.view(),
                old_log_probs: &old,
                advantages: &adv,
                returns: &ret,
            };
            let mut out = match ppo_loss(&policy.net, &batch, &settings.hyper) {
                Ok(o) => o,
                Err(e) => {
                    restore(policy, adam);
                    return Err(e);
                }
            };
            let norm = clip_global_norm(&mut out.grads, settings.max_grad_norm);
            if !norm.is_finite() {
                restore(policy, adam);
                return Err(Error::Numerical("non-finite gradient".into()));
            }
            adam.update(&mut policy.net.params, &out.grads, settings.learning_rate);
            if !policy.net.is_finite() {
                restore(policy, adam);
                return Err(Error::Numerical("non-finite parameters after update".into()));
            }
            stats.policy_loss += out.policy_loss;
            stats.value_loss += out.value_loss;
            stats.entropy += out.entropy;
            stats.clip_fraction += out.clip_fraction;
            stats.approx_kl += out.approx_kl;
            stats.grad_norm += norm;
            stats.optimizer_steps += 1;
        }
    }
    let s = stats.optimizer_steps.max(1) as f64;
    stats.policy_loss /= s;
    stats.value_loss /= s;
    stats.entropy /= s;
    stats.clip_fraction /= s;
    stats.approx_kl /= s;
    stats.grad_norm /= s;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::network::NetworkShape;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(head: HeadKind) -> (ActorCritic, Array2<f64>, Array2<f64>, Vec<f64>) {
        let shape = NetworkShape {
            input: 3,
            hidden: vec![8, 8],
            actions: 2,
            head,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = ActorCritic::new(shape, 0.5f64.ln(), &mut rng).unwrap();
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - 1.5) * 0.4 + j as f64 * 0.2);
        let a = Array2::from_shape_fn((4, 2), |(i, j)| 0.15 + 0.2 * i as f64 + 0.05 * j as f64);
        let old: Vec<f64> = (0..4)
            .map(|i| {
                let c = net.forward(x.view()).unwrap();
                let ls = net.log_std().map(|p| p.row(0).to_vec());
                evaluate_head(head, &row_vec(&c.head, i), ls.as_deref(), &a.row(i).to_vec()).log_prob
            })
            .collect();
        (net, x, a, old)
    }

    #[test]
    fn identical_policy_has_unit_ratio() {
        let (net, x, a, old) = setup(HeadKind::Beta);
        let adv = [1.0, -0.5, 0.25, 2.0];
        let ret = [0.0; 4];
        let hyper = PpoHyper {
            clip_ratio: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.0,
        };
        let batch = Batch {
            features: x.view(),
            actions: a.view(),
            old_log_probs: &old,
            advantages: &adv,
            returns: &ret,
        };
        let out = ppo_loss(&net, &batch, &hyper).unwrap();
        assert_eq!(out.clip_fraction, 0.0);
        let mean_adv: f64 = adv.iter().sum::<f64>() / 4.0;
        assert!((out.policy_loss + mean_adv).abs() < 1e-12);
    }

    #[test]
    fn zero_advantage_has_no_policy_gradient() {
        let (net, x, a, old) = setup(HeadKind::Beta);
        let hyper = PpoHyper {
            clip_ratio: 0.2,
            value_coef: 0.0,
            entropy_coef: 0.0,
        };
        let batch = Batch {
            features: x.view(),
            actions: a.view(),
            old_log_probs: &old,
            advantages: &[0.0; 4],
            returns: &[0.0; 4],
        };
        let out = ppo_loss(&net, &batch, &hyper).unwrap();
        assert!(out.grads.iter().all(|g| g.iter().all(|v| *v == 0.0)));
    }
}
