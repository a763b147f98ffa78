//! The training loop: collect → GAE → update, with metrics and resumable
//! checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{ActionCommand, EnvSettings, EnvSnapshot, GraspEnv, OBS_DIM};
use crate::error::{Error, Result};
use crate::kinematics::N_ACTUATED;
use crate::policy::checkpoint::Checkpoint;
use crate::policy::dist::ActionBounds;
use crate::policy::network::{ActorCritic, NetworkShape};
use crate::policy::{ActMode, Policy};
use crate::train::adam::Adam;
use crate::train::buffer::RolloutBuffer;
use crate::train::ppo::{ppo_update, PpoHyper, UpdateSettings};
use crate::train::TrainConfig;

/// One record per update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub update: u64,
    /// Agent transitions collected so far, summed over environments.
    pub total_steps: u64,
    /// Episodes that finished during this update's rollout.
    pub episodes: u64,
    pub mean_episode_reward: Option<f64>,
    /// In policy transitions.
    pub mean_episode_length: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub terminations: BTreeMap<String, u64>,
    pub steps_per_sec: f64,
    pub wall_time: f64,
}

impl TrainMetrics {
    /// The record without its wall-clock fields.
    pub fn deterministic_part(&self) -> TrainMetrics {
        TrainMetrics {
            steps_per_sec: 0.0,
            wall_time: 0.0,
            ..self.clone()
        }
    }
}

/// SHA-256 over the deterministic fields of a metrics stream.
pub fn metrics_hash(metrics: &[TrainMetrics]) -> String {
    let mut h = Sha256::new();
    for m in metrics {
        h.update(serde_json::to_vec(&m.deterministic_part()).expect("metrics serialize"));
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Independent seed for stream `k` of a run seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A finished episode seen during collection.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub env: usize,
    pub episode_return: f64,
    pub length: u64,
    pub reason: crate::env::TerminationReason,
}

/// Steps every environment `rollout_len` times with the current policy.
///
/// `features` holds each env's current network input and is advanced in
/// place. Episodes cut by the time limit get `γ·V(s_T)` added to their last
/// reward so the value target does not treat the clock as failure.
/// Stored rewards are multiplied by `reward_scale`; episode records keep
/// the raw returns.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts(
    envs: &mut [GraspEnv],
    features: &mut Array2<f64>,
    policy: &Policy,
    rollout_len: usize,
    gamma: f64,
    reward_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(RolloutBuffer, Vec<EpisodeRecord>)> {
    let m = envs.len();
    let k = policy.actions();
    let mut buffer = RolloutBuffer::new(m, rollout_len, OBS_DIM, k);
    let mut episodes = Vec::new();
    for t in 0..rollout_len {
        let acts = policy.act(features, ActMode::Explore, rng)?;
        for (e, env) in envs.iter_mut().enumerate() {
            let a = &acts[e];
            let mut cmd = [0.0; N_ACTUATED];
            cmd.copy_from_slice(&a.command);
            let obs_row: Vec<f64> = features.row(e).to_vec();
            let out = env.step(&ActionCommand(cmd))?;
            let next = env.features(&out.observation);
            let mut reward = out.reward * reward_scale;
            if let Some(reason) = out.termination {
                if reason.is_truncation() {
                    let x = Array2::from_shape_vec((1, OBS_DIM), next.to_vec()).expect("row shape");
                    reward += gamma * policy.values(&x)?[0];
                }
                episodes.push(EpisodeRecord {
                    env: e,
                    episode_return: env.episode_return(),
                    length: env.episode_length(),
                    reason,
                });
                let first = env.reset()?;
                let f = env.features(&first);
                features.row_mut(e).iter_mut().zip(f.iter()).for_each(|(d, s)| *d = *s);
            } else {
                features.row_mut(e).iter_mut().zip(next.iter()).for_each(|(d, s)| *d = *s);
            }
            buffer.store(e, t, &obs_row, &a.stored, a.log_prob, reward, a.value, out.termination);
        }
    }
    buffer.last_values = policy.values(features)?;
    Ok((buffer, episodes))
}

/// Output locations of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunPaths {
    pub checkpoint_dir: PathBuf,
    pub log_dir: PathBuf,
}

pub struct Trainer {
    pub settings: EnvSettings,
    pub config: TrainConfig,
    pub seed: u64,
    pub policy: Policy,
    pub adam: Adam,
    envs: Vec<GraspEnv>,
    features: Array2<f64>,
    rng: ChaCha8Rng,
    update: u64,
    steps: u64,
    elapsed: f64,
    metrics: Vec<TrainMetrics>,
}

const CHECKPOINT_KIND: &str = "crane-grasp-trainer";

impl Trainer {
    pub fn new(settings: EnvSettings, config: TrainConfig, seed: u64) -> Result<Self> {
        settings.validate()?;
        config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
        let shape = NetworkShape {
            input: OBS_DIM,
            hidden: config.hidden.clone(),
            actions: N_ACTUATED,
            head: config.distribution,
        };
        let net = ActorCritic::new(shape, config.initial_std.ln(), &mut init_rng)?;
        let bounds = ActionBounds::symmetric(&settings.kinematics.limits.max_speed)?;
        let policy = Policy::new(net, bounds, config.effective_rpo_epsilon())?;
        let adam = Adam::new(config.adam.clone(), &policy.net.params);
        let mut envs = Vec::with_capacity(config.n_envs);
        let mut features = Array2::zeros((config.n_envs, OBS_DIM));
        for i in 0..config.n_envs {
            let mut env = GraspEnv::new(settings.clone(), derive_seed(seed, 1000 + i as u64), i)?;
            let obs = env.reset()?;
            let f = env.features(&obs);
            features.row_mut(i).iter_mut().zip(f.iter()).for_each(|(d, s)| *d = *s);
            envs.push(env);
        }
        Ok(Self {
            settings,
            config,
            seed,
            policy,
            adam,
            envs,
            features,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)),
            update: 0,
            steps: 0,
            elapsed: 0.0,
            metrics: Vec::new(),
        })
    }

    /// Agent transitions collected by one update.
    pub fn steps_per_update(&self) -> u64 {
        (self.config.n_envs * self.config.rollout_len) as u64
    }

    pub fn total_updates(&self) -> u64 {
        self.config.total_steps.div_ceil(self.steps_per_update())
    }

    pub fn updates_done(&self) -> u64 {
        self.update
    }

    pub fn steps_done(&self) -> u64 {
        self.steps
    }

    pub fn metrics(&self) -> &[TrainMetrics] {
        &self.metrics
    }

    pub fn is_finished(&self) -> bool {
        self.update >= self.total_updates()
    }

    /// One collect → GAE → update round.
    pub fn step_update(&mut self) -> Result<TrainMetrics> {
        let start = Instant::now();
        let (mut buffer, episodes) = collect_rollouts(
            &mut self.envs,
            &mut self.features,
            &self.policy,
            self.config.rollout_len,
            self.config.gamma,
            self.config.reward_scale,
            &mut self.rng,
        )?;
        buffer.compute_gae(self.config.gamma, self.config.gae_lambda);
        let settings = UpdateSettings {
            hyper: PpoHyper {
                clip_ratio: self.config.clip_ratio,
                value_coef: self.config.value_coef,
                entropy_coef: self.config.entropy_coef,
            },
            epochs: self.config.epochs,
            minibatch_size: self.config.minibatch_size,
            learning_rate: self.config.learning_rate,
            max_grad_norm: self.config.max_grad_norm,
        };
        let stats = match ppo_update(&mut self.policy, &mut self.adam, &buffer, &settings, &mut self.rng) {
            Ok(s) => s,
            Err(e) => {
                log::error!("update {} aborted, parameters restored: {e}", self.update + 1);
                return Err(e);
            }
        };
        self.update += 1;
        self.steps += self.steps_per_update();
        let secs = start.elapsed().as_secs_f64();
        self.elapsed += secs;

        let mut terminations = BTreeMap::new();
        for ep in &episodes {
            *terminations.entry(format!("{:?}", ep.reason)).or_insert(0) += 1;
        }
        let n_ep = episodes.len();
        let mean = |f: &dyn Fn(&EpisodeRecord) -> f64| {
            (n_ep > 0).then(|| episodes.iter().map(f).sum::<f64>() / n_ep as f64)
        };
        let m = TrainMetrics {
            update: self.update,
            total_steps: self.steps,
            episodes: n_ep as u64,
            mean_episode_reward: mean(&|e| e.episode_return),
            mean_episode_length: mean(&|e| e.length as f64),
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
            approx_kl: stats.approx_kl,
            grad_norm: stats.grad_norm,
            terminations,
            steps_per_sec: self.steps_per_update() as f64 / secs.max(1e-9),
            wall_time: self.elapsed,
        };
        self.metrics.push(m.clone());
        Ok(m)
    }

    /// Trains until `total_steps`, writing metrics and checkpoints.
    pub fn run(&mut self, paths: Option<&RunPaths>, on_update: &mut dyn FnMut(&TrainMetrics)) -> Result<()> {
        let mut log = match paths {
            Some(p) => Some(self.open_metrics_log(&p.log_dir)?),
            None => None,
        };
        while !self.is_finished() {
            let m = self.step_update()?;
            on_update(&m);
            if let (Some((file, path)), Some(_)) = (log.as_mut(), paths) {
                let line = serde_json::to_string(&m).expect("metrics serialize");
                writeln!(file, "{line}").map_err(|e| Error::io(path.clone(), e))?;
                file.flush().map_err(|e| Error::io(path.clone(), e))?;
            }
            if let Some(p) = paths {
                let interval = self.config.checkpoint_interval;
                if self.is_finished() || (interval > 0 && self.update.is_multiple_of(interval)) {
                    self.write_checkpoints(&p.checkpoint_dir)?;
                }
            }
        }
        Ok(())
    }

    fn open_metrics_log(&self, dir: &Path) -> Result<(fs::File, PathBuf)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("metrics.jsonl");
        let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        for m in &self.metrics {
            let line = serde_json::to_string(m).expect("metrics serialize");
            writeln!(file, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        Ok((file, path))
    }

    fn write_checkpoints(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ckpt = self.checkpoint()?;
        ckpt.write(&dir.join(format!("update_{:06}.ckpt", self.update)))?;
        ckpt.write(&dir.join("latest.ckpt"))
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let settings = toml::to_string(&self.settings).map_err(|e| Error::Checkpoint {
            path: PathBuf::new(),
            message: format!("settings: {e}"),
        })?;
        let config = toml::to_string(&self.config).map_err(|e| Error::Checkpoint {
            path: PathBuf::new(),
            message: format!("train config: {e}"),
        })?;
        let envs: Vec<EnvSnapshot> = self.envs.iter().map(|e| e.snapshot()).collect();
        let features: Vec<Vec<f64>> = self.features.rows().into_iter().map(|r| r.to_vec()).collect();
        let metadata = serde_json::json!({
            "kind": CHECKPOINT_KIND,
            "settings": settings,
            "config": config,
            "seed": self.seed,
            "shape": self.policy.net.shape,
            "bounds": self.policy.bounds,
            "rpo_epsilon": self.policy.rpo_epsilon,
            "update": self.update,
            "steps": self.steps,
            "elapsed": self.elapsed,
            "adam_step": self.adam.step,
            "rng": self.rng,
            "envs": envs,
            "features": features,
            "metrics": self.metrics,
        });
        let mut tensors = self.policy.net.params.clone();
        tensors.extend(self.adam.m.iter().cloned());
        tensors.extend(self.adam.v.iter().cloned());
        Ok(Checkpoint { metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint()?.write(path)
    }

    /// Restores a trainer exactly as it was when the checkpoint was written.
    pub fn resume(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::read(path)?;
        let parts = TrainerParts::decode(&ckpt, path)?;
        let policy = parts.policy;
        let p = policy.net.params.len();
        let mut adam = Adam::new(parts.config.adam.clone(), &policy.net.params);
        adam.step = parts.adam_step;
        adam.m = ckpt.tensors[p..2 * p].to_vec();
        adam.v = ckpt.tensors[2 * p..3 * p].to_vec();
        for (a, b) in adam.m.iter().chain(&adam.v).zip(policy.net.params.iter().chain(&policy.net.params)) {
            if a.dim() != b.dim() {
                return Err(bad(path, "optimizer state does not match the network"));
            }
        }
        let meta = &ckpt.metadata;
        let snaps: Vec<EnvSnapshot> = field(meta, "envs", path)?;
        if snaps.len() != parts.config.n_envs {
            return Err(bad(path, "environment count mismatch"));
        }
        let mut envs = Vec::with_capacity(snaps.len());
        for (i, s) in snaps.into_iter().enumerate() {
            let mut env = GraspEnv::new(parts.settings.clone(), 0, i)?;
            env.restore(s);
            envs.push(env);
        }
        let rows: Vec<Vec<f64>> = field(meta, "features", path)?;
        let flat: Vec<f64> = rows.concat();
        let features = Array2::from_shape_vec((parts.config.n_envs, OBS_DIM), flat)
            .map_err(|e| bad(path, &format!("features: {e}")))?;
        Ok(Self {
            settings: parts.settings,
            config: parts.config,
            seed: field(meta, "seed", path)?,
            policy,
            adam,
            envs,
            features,
            rng: field(meta, "rng", path)?,
            update: field(meta, "update", path)?,
            steps: field(meta, "steps", path)?,
            elapsed: field(meta, "elapsed", path)?,
            metrics: field(meta, "metrics", path)?,
        })
    }

    /// Raises the step budget, e.g. to continue a finished run.
    pub fn set_total_steps(&mut self, total: u64) {
        self.config.total_steps = total;
    }
}

fn bad(path: &Path, message: &str) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn field<T: serde::de::DeserializeOwned>(meta: &serde_json::Value, key: &str, path: &Path) -> Result<T> {
    let v = meta.get(key).ok_or_else(|| bad(path, &format!("missing `{key}`")))?;
    T::deserialize(v).map_err(|e| bad(path, &format!("`{key}`: {e}")))
}

struct TrainerParts {
    settings: EnvSettings,
    config: TrainConfig,
    policy: Policy,
    adam_step: u64,
}

impl TrainerParts {
    fn decode(ckpt: &Checkpoint, path: &Path) -> Result<Self> {
        let meta = &ckpt.metadata;
        let kind: String = field(meta, "kind", path)?;
        if kind != CHECKPOINT_KIND {
            return Err(bad(path, &format!("unexpected checkpoint kind `{kind}`")));
        }
        let settings_text: String = field(meta, "settings", path)?;
        let settings: EnvSettings =
            toml::from_str(&settings_text).map_err(|e| bad(path, &format!("settings: {e}")))?;
        let config_text: String = field(meta, "config", path)?;
        let config: TrainConfig = toml::from_str(&config_text).map_err(|e| bad(path, &format!("config: {e}")))?;
        let shape: NetworkShape = field(meta, "shape", path)?;
        let bounds: ActionBounds = field(meta, "bounds", path)?;
        let rpo: f64 = field(meta, "rpo_epsilon", path)?;
        let expected = shape.tensor_shapes();
        if ckpt.tensors.len() != 3 * expected.len() {
            return Err(bad(path, "tensor count does not match the network shape"));
        }
        for (t, s) in ckpt.tensors.iter().zip(&expected) {
            if t.dim() != *s {
                return Err(bad(path, &format!("tensor shape {:?} where {s:?} expected", t.dim())));
            }
        }
        if shape.input != OBS_DIM || shape.actions != N_ACTUATED {
            return Err(bad(path, "network does not match the environment interface"));
        }
        let net = ActorCritic {
            shape,
            params: ckpt.tensors[..expected.len()].to_vec(),
        };
        Ok(Self {
            settings,
            config,
            policy: Policy::new(net, bounds, rpo)?,
            adam_step: field(meta, "adam_step", path)?,
        })
    }
}

/// Loads only the policy (and the environment settings it was trained with).
pub fn load_policy(path: &Path) -> Result<(Policy, EnvSettings)> {
    let ckpt = Checkpoint::read(path)?;
    let parts = TrainerParts::decode(&ckpt, path)?;
    Ok((parts.policy, parts.settings))
}
