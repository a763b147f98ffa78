//! The log-grasping environment: observations, shaped reward, termination
//! rules and optional pose-measurement noise on top of [`crate::sim`].

pub mod geometry;

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{GrappleFrame, JointLimits, KinematicsConfig, JAW, N_ACTUATED, N_JOINTS};
use crate::sim::{ScenarioConfig, SimConfig, SimState, Simulator};
use geometry::{angle_distance, log_axis_vector, relative_distance};

pub const OBS_DIM: usize = N_JOINTS + N_ACTUATED + 4;

/// Raw observation `O = {q, q̇_A, Δp, Δψ}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub q: [f64; N_JOINTS],
    pub qd: [f64; N_ACTUATED],
    pub delta_p: Vector3<f64>,
    pub delta_psi: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        out[..8].copy_from_slice(&self.q);
        out[8..14].copy_from_slice(&self.qd);
        out[14..17].copy_from_slice(self.delta_p.as_slice());
        out[17] = self.delta_psi;
        out
    }

    /// Network input: joints scaled by their ranges, velocities by their
    /// limits, the rotator angle wrapped, distances by `position_scale`.
    pub fn to_features(&self, limits: &JointLimits, position_scale: f64) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        for (j, slot) in out.iter_mut().take(N_JOINTS).enumerate() {
            *slot = if limits.is_bounded(j) {
                let mid = 0.5 * (limits.upper[j] + limits.lower[j]);
                let half = 0.5 * (limits.upper[j] - limits.lower[j]);
                (self.q[j] - mid) / half
            } else {
                wrap_angle(self.q[j]) / PI
            };
        }
        for k in 0..N_ACTUATED {
            out[N_JOINTS + k] = self.qd[k] / limits.max_speed[k];
        }
        for i in 0..3 {
            out[14 + i] = self.delta_p[i] / position_scale;
        }
        out[17] = self.delta_psi;
        out
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Wraps into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Desired actuated joint velocities `q̇_A,d` in physical units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand(pub [f64; N_ACTUATED]);

impl ActionCommand {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub distance: f64,
    pub grapple: f64,
    pub lift: f64,
    pub balance: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight ω1 of the angle distance in `d_combine`.
    pub omega1: f64,
    /// Decay ω2 of `r_distance`.
    pub omega2: f64,
    /// Slope ω3 of the lift term.
    pub omega3: f64,
    /// Desired lift height `z_l,d` (m).
    pub lift_target: f64,
    /// Largest log diameter `d_max_log`, sets the target offset `d_off`.
    pub max_log_diameter: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            omega1: 0.5,
            omega2: 2.0,
            omega3: 1.0,
            lift_target: 1.5,
            max_log_diameter: 0.8,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("omega1", self.omega1), ("omega2", self.omega2), ("omega3", self.omega3)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("reward.{key}"), "must be positive"));
            }
        }
        if !(self.max_log_diameter > 0.0) {
            return Err(Error::config("reward.max_log_diameter", "must be positive"));
        }
        Ok(())
    }
}

/// `d_combine = ‖Δp‖ + ω1·Δψ`.
pub fn combined_distance(delta_p: &Vector3<f64>, delta_psi: f64, cfg: &RewardConfig) -> f64 {
    delta_p.norm() + cfg.omega1 * delta_psi
}

/// The four shaped terms and their sum.
///
/// `grip` is `q8/q̄8`, `log_height` is `z_l`, `command_norm` is `‖q̇_A,d‖`.
pub fn reward_terms(
    d_combine: f64,
    grip: f64,
    log_height: f64,
    command_norm: f64,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let x = grip.clamp(0.0, 1.0);
    let distance = (-cfg.omega2 * d_combine).exp();
    let grapple = distance * x + (1.0 - x) * (1.0 - distance);
    let lift = (1.0 - (cfg.omega3 * (log_height - cfg.lift_target).abs()).tanh()) * (1.0 - grapple);
    let balance = (1.0 - command_norm.tanh()) * (1.0 - lift);
    RewardBreakdown {
        distance,
        grapple,
        lift,
        balance,
        total: distance + grapple + lift + balance,
    }
}

/// Reward of `state` reached under `command`.
pub fn reward(
    sim: &Simulator,
    state: &SimState,
    command: &ActionCommand,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let grapple = sim.grapple(state);
    let (dp, dpsi) = pose_error(&grapple, state, cfg);
    reward_terms(
        combined_distance(&dp, dpsi, cfg),
        state.joints[JAW] / sim.kinematics.jaw_closed(),
        state.log.position.z,
        command.norm(),
        cfg,
    )
}

/// Noise-free `(Δp, Δψ)` for the current state.
pub fn pose_error(grapple: &GrappleFrame, state: &SimState, cfg: &RewardConfig) -> (Vector3<f64>, f64) {
    let dp = relative_distance(grapple, &state.log.position, cfg.max_log_diameter);
    let axis = match &state.attachment {
        Some(_) => state.log_axis(grapple),
        None => log_axis_vector(state.log.yaw),
    };
    (dp, angle_distance(&grapple.x_axis, &axis))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TerminationReason {
    TimeLimit,
    ProximityTimeout,
    JointLimit,
    LogOutOfRange,
    VelocityLimit,
    Success,
}

impl TerminationReason {
    /// Episode cut by the clock rather than by failure; the trainer
    /// bootstraps through it.
    pub fn is_truncation(self) -> bool {
        self == TerminationReason::TimeLimit
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerminationConfig {
    /// Hard episode cap `t_max` (s).
    pub max_time: f64,
    /// Deadline `t_limit` (s) for first getting within `proximity_threshold`.
    pub proximity_deadline: f64,
    /// Threshold ε on `d_combine`.
    pub proximity_threshold: f64,
    /// Grapple–log distance (m) beyond which the episode ends.
    pub max_log_distance: f64,
    /// End the episode with `Success` once the log is held at the lift target.
    pub terminate_on_success: bool,
    pub success_lift_tolerance: f64,
    pub success_grip_fraction: f64,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self {
            max_time: 9.0,
            proximity_deadline: 6.0,
            proximity_threshold: 0.2,
            max_log_distance: 8.0,
            terminate_on_success: false,
            success_lift_tolerance: 0.25,
            success_grip_fraction: 0.95,
        }
    }
}

impl TerminationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_time > 0.0) {
            return Err(Error::config("termination.max_time", "must be positive"));
        }
        if !(self.proximity_deadline > 0.0 && self.proximity_deadline <= self.max_time) {
            return Err(Error::config(
                "termination.proximity_deadline",
                "must lie in (0, max_time]",
            ));
        }
        if !(self.proximity_threshold > 0.0) {
            return Err(Error::config("termination.proximity_threshold", "must be positive"));
        }
        Ok(())
    }
}

const TIME_EPS: f64 = 1e-9;

/// Failure and clock checks on a post-step state.
///
/// `reached` tells whether `d_combine < ε` has held at any step so far
/// (including this one). Priority: joint limit, velocity limit, log out of
/// range, proximity timeout, time limit.
pub fn check_termination(
    sim: &Simulator,
    state: &SimState,
    reached: bool,
    cfg: &TerminationConfig,
) -> Option<TerminationReason> {
    let limits = &sim.kinematics.limits;
    if state.limit_hits.iter().any(|&h| h) {
        return Some(TerminationReason::JointLimit);
    }
    let too_fast = state
        .actuated_velocities
        .iter()
        .zip(limits.max_speed.iter())
        .any(|(v, m)| v.abs() > m * (1.0 + 1e-12));
    if too_fast {
        return Some(TerminationReason::VelocityLimit);
    }
    let grapple = sim.grapple(state);
    if (state.log.position - grapple.position).norm() > cfg.max_log_distance {
        return Some(TerminationReason::LogOutOfRange);
    }
    if !reached && state.sim_time >= cfg.proximity_deadline - TIME_EPS {
        return Some(TerminationReason::ProximityTimeout);
    }
    if state.sim_time >= cfg.max_time - TIME_EPS {
        return Some(TerminationReason::TimeLimit);
    }
    None
}

/// Whether the log is held closed at the lift target.
pub fn holds_lifted(sim: &Simulator, state: &SimState, reward: &RewardConfig, cfg: &TerminationConfig) -> bool {
    state.attached()
        && state.joints[JAW] >= cfg.success_grip_fraction * sim.kinematics.jaw_closed()
        && (state.log.position.z - reward.lift_target).abs() <= cfg.success_lift_tolerance
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub enabled: bool,
    /// Half-width of the uniform relative error ε_p, ε_o.
    pub error_range: f64,
    /// Distance `d_noise` (m) at which the relative error reaches its full range.
    pub decay_distance: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            error_range: 0.1,
            decay_distance: 8.0,
        }
    }
}

/// Quadratic decay `s = (‖Δp‖/d_noise)²`.
pub fn noise_scale(distance: f64, cfg: &NoiseConfig) -> f64 {
    (distance / cfg.decay_distance).powi(2)
}

/// Perturbs a measured pose error with distance-dependent relative noise.
pub fn inject_pose_noise<R: Rng + ?Sized>(
    delta_p: &Vector3<f64>,
    delta_psi: f64,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> (Vector3<f64>, f64) {
    let s = noise_scale(delta_p.norm(), cfg);
    let e = cfg.error_range;
    let (ep, eo) = if e > 0.0 {
        (rng.random_range(-e..=e), rng.random_range(-e..=e))
    } else {
        (0.0, 0.0)
    };
    (
        delta_p + delta_p * (ep * s),
        (delta_psi + eo * delta_psi * s).clamp(0.0, 1.0),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Simulator steps per policy action.
    pub action_repeat: usize,
    /// Divisor applied to Δp in the network input (m).
    pub position_scale: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            action_repeat: 1,
            position_scale: 4.0,
        }
    }
}

/// Everything needed to build an environment instance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvSettings {
    pub kinematics: KinematicsConfig,
    pub sim: SimConfig,
    pub scenario: ScenarioConfig,
    pub reward: RewardConfig,
    pub termination: TerminationConfig,
    pub noise: NoiseConfig,
    pub env: EnvConfig,
}

impl EnvSettings {
    pub fn validate(&self) -> Result<()> {
        self.kinematics.validate()?;
        self.sim.validate()?;
        self.scenario.validate()?;
        self.reward.validate()?;
        self.termination.validate()?;
        if self.env.action_repeat == 0 {
            return Err(Error::config("env.action_repeat", "must be at least 1"));
        }
        if !(self.env.position_scale > 0.0) {
            return Err(Error::config("env.position_scale", "must be positive"));
        }
        if !(self.noise.decay_distance > 0.0 && self.noise.error_range >= 0.0) {
            return Err(Error::config("noise", "decay_distance > 0 and error_range ≥ 0 required"));
        }
        Ok(())
    }
}

/// Result of one environment transition.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    /// Reward summed over the repeated simulator steps.
    pub reward: f64,
    /// Breakdown of the last simulator step.
    pub breakdown: RewardBreakdown,
    pub termination: Option<TerminationReason>,
}

/// Serializable dynamic part of a [`GraspEnv`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub rng: ChaCha8Rng,
    pub state: Option<SimState>,
    pub done: bool,
    pub reached: bool,
    pub episode_return: f64,
    pub episode_length: u64,
}

/// One environment instance. Owns its simulator state and rng stream.
#[derive(Clone, Debug)]
pub struct GraspEnv {
    pub sim: Simulator,
    pub settings: EnvSettings,
    index: usize,
    rng: ChaCha8Rng,
    state: Option<SimState>,
    done: bool,
    reached: bool,
    episode_return: f64,
    episode_length: u64,
}

impl GraspEnv {
    /// `index` only labels protocol errors.
    pub fn new(settings: EnvSettings, seed: u64, index: usize) -> Result<Self> {
        settings.validate()?;
        let sim = Simulator::new(settings.kinematics.clone(), settings.sim.clone())?;
        Ok(Self {
            sim,
            settings,
            index,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: None,
            done: false,
            reached: false,
            episode_return: 0.0,
            episode_length: 0,
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Samples a fresh scene from the configured scenario.
    pub fn reset(&mut self) -> Result<Observation> {
        let state = self.sim.spawn(&self.settings.scenario, &mut self.rng)?;
        Ok(self.reset_to(state))
    }

    /// Starts an episode from a given state.
    pub fn reset_to(&mut self, state: SimState) -> Observation {
        self.state = Some(state);
        self.done = false;
        self.reached = false;
        self.episode_return = 0.0;
        self.episode_length = 0;
        self.reached = self.d_combine() < self.settings.termination.proximity_threshold;
        self.observe()
    }

    pub fn state(&self) -> Option<&SimState> {
        self.state.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Whether `d_combine < ε` has held at some step of this episode.
    pub fn reached(&self) -> bool {
        self.reached
    }

    pub fn episode_return(&self) -> f64 {
        self.episode_return
    }

    /// Policy transitions taken in the current episode.
    pub fn episode_length(&self) -> u64 {
        self.episode_length
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn current(&self) -> &SimState {
        self.state.as_ref().expect("environment not reset")
    }

    /// Noise-free combined distance of the current state.
    pub fn d_combine(&self) -> f64 {
        let st = self.current();
        let (dp, dpsi) = pose_error(&self.sim.grapple(st), st, &self.settings.reward);
        combined_distance(&dp, dpsi, &self.settings.reward)
    }

    /// Observation of the current state, with noise if enabled (draws from
    /// the env rng).
    pub fn observe(&mut self) -> Observation {
        let st = self.current();
        let (dp, dpsi) = pose_error(&self.sim.grapple(st), st, &self.settings.reward);
        let q = st.joints.0;
        let qd = st.actuated_velocities;
        let (delta_p, delta_psi) = if self.settings.noise.enabled {
            inject_pose_noise(&dp, dpsi, &self.settings.noise, &mut self.rng)
        } else {
            (dp, dpsi)
        };
        Observation {
            q,
            qd,
            delta_p,
            delta_psi,
        }
    }

    pub fn features(&self, obs: &Observation) -> [f64; OBS_DIM] {
        obs.to_features(&self.sim.kinematics.limits, self.settings.env.position_scale)
    }

    pub fn step(&mut self, command: &ActionCommand) -> Result<StepOutcome> {
        if self.state.is_none() || self.done {
            return Err(Error::Protocol {
                env: self.index,
                message: if self.done {
                    "step after termination without reset".into()
                } else {
                    "step before reset".into()
                },
            });
        }
        let mut total = 0.0;
        let mut breakdown = RewardBreakdown::default();
        let mut termination = None;
        for _ in 0..self.settings.env.action_repeat {
            let next = self.sim.step(self.current(), &command.0)?;
            breakdown = reward(&self.sim, &next, command, &self.settings.reward);
            total += breakdown.total;
            self.state = Some(next);
            if self.d_combine() < self.settings.termination.proximity_threshold {
                self.reached = true;
            }
            let st = self.current();
            termination = check_termination(&self.sim, st, self.reached, &self.settings.termination);
            if termination.is_none()
                && self.settings.termination.terminate_on_success
                && self.reached
                && holds_lifted(&self.sim, st, &self.settings.reward, &self.settings.termination)
            {
                termination = Some(TerminationReason::Success);
            }
            if termination.is_some() {
                break;
            }
        }
        self.done = termination.is_some();
        self.episode_return += total;
        self.episode_length += 1;
        Ok(StepOutcome {
            observation: self.observe(),
            reward: total,
            breakdown,
            termination,
        })
    }

    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            rng: self.rng.clone(),
            state: self.state.clone(),
            done: self.done,
            reached: self.reached,
            episode_return: self.episode_return,
            episode_length: self.episode_length,
        }
    }

    pub fn restore(&mut self, snap: EnvSnapshot) {
        self.rng = snap.rng;
        self.state = snap.state;
        self.done = snap.done;
        self.reached = snap.reached;
        self.episode_return = snap.episode_return;
        self.episode_length = snap.episode_length;
    }
}
