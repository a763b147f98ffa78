//! Time-stepping of the simplified crane world.
//!
//! Actuated joints follow commanded velocities through a first-order lag,
//! the tip/tilt joints swing as damped pendulums driven by the boom tip
//! acceleration, and grasping is decided geometrically (see [`grasp`]).

pub mod grasp;
pub mod pendulum;
pub mod trajectory;

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::geometry::{log_axis_vector, yaw_of_axis};
use crate::error::{Error, Result};
use crate::kinematics::{
    clamp_to_limits, frame_chain, grapple_from_wrist, jaw_width_unchecked, GrappleFrame,
    JointVector, KinematicsConfig, PoseTransform, ACTUATED, JAW, N_ACTUATED, N_JOINTS, UNACTUATED,
};
use grasp::{captures, grasp_geometry, releases, Attachment};
use pendulum::{PendulumConfig, PendulumState};

/// Index of the frame whose origin is the tip pivot (end of the telescope).
const PIVOT_FRAME: usize = 4;

/// A cylindrical wood log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogSpec {
    pub diameter: f64,
    pub length: f64,
    /// Center point `p_l` in the base frame.
    pub position: Vector3<f64>,
    /// Yaw `ψ_l` about the base z axis.
    pub yaw: f64,
    /// Bookkeeping only; nothing kinematic depends on it.
    pub mass: f64,
}

impl LogSpec {
    pub fn on_ground(diameter: f64, length: f64, x: f64, y: f64, yaw: f64, density: f64) -> Self {
        Self {
            diameter,
            length,
            position: Vector3::new(x, y, diameter / 2.0),
            yaw,
            mass: density * PI * (diameter / 2.0).powi(2) * length,
        }
    }
}

/// Full world state. A plain value: cloning it snapshots the world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub joints: JointVector,
    /// Realized q̇ of q1, q2, q3, q4, q7, q8.
    pub actuated_velocities: [f64; N_ACTUATED],
    /// q̇5, q̇6.
    pub pendulum_velocities: [f64; 2],
    pub log: LogSpec,
    pub attachment: Option<Attachment>,
    pub sim_time: f64,
    pub steps: u64,
    /// Tip pivot position and velocity, used to derive its acceleration.
    pub pivot_position: Vector3<f64>,
    pub pivot_velocity: Vector3<f64>,
    /// Joints that hit a limit during the last step.
    pub limit_hits: [bool; N_JOINTS],
}

impl SimState {
    pub fn attached(&self) -> bool {
        self.attachment.is_some()
    }

    /// Unit vector along the log, including any tilt picked up while attached.
    pub fn log_axis(&self, grapple: &GrappleFrame) -> Vector3<f64> {
        match &self.attachment {
            Some(a) => grapple.rotation() * a.relative_axis,
            None => log_axis_vector(self.log.yaw),
        }
    }
}

/// Log diameter distribution `p(d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiameterDistribution {
    Uniform { min: f64, max: f64 },
    Fixed { value: f64 },
}

impl DiameterDistribution {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DiameterDistribution::Uniform { min, max } => rng.random_range(min..=max),
            DiameterDistribution::Fixed { value } => value,
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            DiameterDistribution::Uniform { min, max } => (min, max),
            DiameterDistribution::Fixed { value } => (value, value),
        }
    }
}

/// Episode randomization: log placement and size, crane slew.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Annulus radii (m) of the log center around the crane base.
    pub radius_range: [f64; 2],
    /// Bearing range (rad) of the log center, measured like q1.
    pub bearing_range: [f64; 2],
    pub yaw_range: [f64; 2],
    pub diameter: DiameterDistribution,
    pub slew_range: [f64; 2],
    pub log_length: f64,
    pub wood_density: f64,
    /// Start configuration. q1 is replaced by the sampled slew and q5, q6 by
    /// the hanging equilibrium.
    pub rest_pose: [f64; N_JOINTS],
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            radius_range: [5.5, 7.5],
            bearing_range: [-2.0 * FRAC_PI_3, -FRAC_PI_3],
            yaw_range: [0.0, PI],
            diameter: DiameterDistribution::Uniform { min: 0.3, max: 0.8 },
            slew_range: [-2.0 * FRAC_PI_3, -FRAC_PI_3],
            log_length: 2.75,
            wood_density: 800.0,
            rest_pose: [0.0, 0.0, 2.0, 0.1, 0.0, 0.0, 0.0, 0.25],
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |key: &str, r: [f64; 2]| {
            if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
                Ok(())
            } else {
                Err(Error::config(format!("scenario.{key}"), format!("empty range {r:?}")))
            }
        };
        ordered("radius_range", self.radius_range)?;
        ordered("bearing_range", self.bearing_range)?;
        ordered("yaw_range", self.yaw_range)?;
        ordered("slew_range", self.slew_range)?;
        if self.radius_range[0] < 0.0 {
            return Err(Error::config("scenario.radius_range", "radius must be non-negative"));
        }
        let (lo, hi) = self.diameter.bounds();
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config("scenario.diameter", format!("bad diameter bounds [{lo}, {hi}]")));
        }
        if !(self.log_length > 0.0) {
            return Err(Error::config("scenario.log_length", "must be positive"));
        }
        Ok(())
    }

    pub fn with_fixed_diameter(&self, d: f64) -> Self {
        Self {
            diameter: DiameterDistribution::Fixed { value: d },
            ..self.clone()
        }
    }
}

/// Step-function parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    /// First-order lag τ (s) of the velocity controller; 0 is ideal tracking.
    pub velocity_lag: f64,
    pub pendulum: PendulumConfig,
    /// Max Δψ at which the grapple can capture a log.
    pub align_tolerance: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.005,
            velocity_lag: 0.1,
            pendulum: PendulumConfig::default(),
            align_tolerance: 0.05,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("sim.dt", "must be positive"));
        }
        if !(self.velocity_lag >= 0.0) {
            return Err(Error::config("sim.velocity_lag", "must be non-negative"));
        }
        if !(self.pendulum.length > 0.0) {
            return Err(Error::config("sim.pendulum.length", "must be positive"));
        }
        Ok(())
    }
}

/// The crane world: kinematics plus step parameters.
#[derive(Clone, Debug)]
pub struct Simulator {
    pub kinematics: KinematicsConfig,
    pub config: SimConfig,
}

impl Simulator {
    pub fn new(kinematics: KinematicsConfig, config: SimConfig) -> Result<Self> {
        kinematics.validate()?;
        config.validate()?;
        Ok(Self { kinematics, config })
    }

    pub fn grapple(&self, state: &SimState) -> GrappleFrame {
        self.grapple_for(&state.joints)
    }

    pub fn grapple_for(&self, q: &JointVector) -> GrappleFrame {
        let chain = frame_chain(q, &self.kinematics.dh);
        grapple_from_wrist(chain.last().expect("empty DH table"), self.kinematics.grapple_offset)
    }

    pub fn jaw_width(&self, state: &SimState) -> f64 {
        jaw_width_unchecked(state.joints[JAW], &self.kinematics)
    }

    /// Tip/tilt angles at which the grapple hangs plumb for the current boom pose.
    pub fn hanging_equilibrium(&self, q: &JointVector) -> [f64; 2] {
        let chain = frame_chain(q, &self.kinematics.dh);
        hanging_equilibrium(&chain[PIVOT_FRAME].rotation)
    }

    /// Builds a resting state for `q` (pendulum joints set to equilibrium).
    pub fn resting_state(&self, mut q: JointVector, log: LogSpec) -> SimState {
        let eq = self.hanging_equilibrium(&q);
        for (k, &j) in UNACTUATED.iter().enumerate() {
            q[j] = eq[k];
        }
        let (q, _) = clamp_to_limits(&q, &self.kinematics.limits);
        let pivot = frame_chain(&q, &self.kinematics.dh)[PIVOT_FRAME].translation;
        SimState {
            joints: q,
            actuated_velocities: [0.0; N_ACTUATED],
            pendulum_velocities: [0.0; 2],
            log,
            attachment: None,
            sim_time: 0.0,
            steps: 0,
            pivot_position: pivot,
            pivot_velocity: Vector3::zeros(),
            limit_hits: [false; N_JOINTS],
        }
    }

    /// Samples a fresh episode start.
    pub fn spawn<R: Rng + ?Sized>(&self, scenario: &ScenarioConfig, rng: &mut R) -> Result<SimState> {
        scenario.validate()?;
        let d = scenario.diameter.sample(rng);
        let [r0, r1] = scenario.radius_range;
        // Area-uniform radius over the annulus.
        let radius = rng.random_range(r0 * r0..=r1 * r1).sqrt();
        let bearing = rng.random_range(scenario.bearing_range[0]..=scenario.bearing_range[1]);
        let yaw = rng.random_range(scenario.yaw_range[0]..=scenario.yaw_range[1]);
        let slew = rng.random_range(scenario.slew_range[0]..=scenario.slew_range[1]);
        let log = LogSpec::on_ground(
            d,
            scenario.log_length,
            radius * bearing.cos(),
            radius * bearing.sin(),
            yaw,
            scenario.wood_density,
        );
        let mut q = JointVector(scenario.rest_pose);
        q[0] = slew;
        Ok(self.resting_state(q, log))
    }

    /// Advances the world by one `dt` under desired actuated velocities.
    pub fn step(&self, state: &SimState, desired: &[f64; N_ACTUATED]) -> Result<SimState> {
        if let Some(k) = desired.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite velocity command for actuated joint {k}"
            )));
        }
        let dt = self.config.dt;
        let limits = &self.kinematics.limits;
        let blend = if self.config.velocity_lag > 0.0 {
            1.0 - (-dt / self.config.velocity_lag).exp()
        } else {
            1.0
        };

        let mut next = state.clone();
        for (k, &j) in ACTUATED.iter().enumerate() {
            let vmax = limits.max_speed[k];
            let target = desired[k].clamp(-vmax, vmax);
            let v = state.actuated_velocities[k];
            let v = (v + (target - v) * blend).clamp(-vmax, vmax);
            next.actuated_velocities[k] = v;
            next.joints[j] += v * dt;
        }
        let (clamped, mut hits) = clamp_to_limits(&next.joints, limits);
        next.joints = clamped;
        for (k, &j) in ACTUATED.iter().enumerate() {
            if hits[j] {
                next.actuated_velocities[k] = 0.0;
            }
        }

        let chain = frame_chain(&next.joints, &self.kinematics.dh);
        let pivot = chain[PIVOT_FRAME].translation;
        let pivot_velocity = (pivot - state.pivot_position) / dt;
        let pivot_acceleration = (pivot_velocity - state.pivot_velocity) / dt;
        next.pivot_position = pivot;
        next.pivot_velocity = pivot_velocity;

        let (swing, swing_hits) = self.swing(&next, &chain, &pivot_acceleration, dt);
        for (k, &j) in UNACTUATED.iter().enumerate() {
            next.joints[j] = swing.angle[k];
            next.pendulum_velocities[k] = swing.velocity[k];
            hits[j] |= swing_hits[k];
        }
        next.limit_hits = hits;

        next.steps = state.steps + 1;
        next.sim_time = next.steps as f64 * dt;

        let grapple = self.grapple(&next);
        self.update_grasp(&mut next, &grapple);
        Ok(next)
    }

    /// Pendulum update of q5/q6 for a base acceleration, without touching
    /// the rest of the state.
    pub fn pendulum_step(
        &self,
        state: &SimState,
        base_acceleration: &Vector3<f64>,
        dt: f64,
    ) -> (PendulumState, [bool; 2]) {
        let chain = frame_chain(&state.joints, &self.kinematics.dh);
        self.swing(state, &chain, base_acceleration, dt)
    }

    fn swing(
        &self,
        state: &SimState,
        chain: &[PoseTransform],
        base_acceleration: &Vector3<f64>,
        dt: f64,
    ) -> (PendulumState, [bool; 2]) {
        let equilibrium = hanging_equilibrium(&chain[PIVOT_FRAME].rotation);
        let pivot = chain[PIVOT_FRAME].translation;
        let grapple = grapple_from_wrist(chain.last().expect("empty DH table"), self.kinematics.grapple_offset);
        let hang = (grapple.position - pivot).try_normalize(1e-9).unwrap_or(-Vector3::z());
        // Swing axes are the z axes of the frames the tip and tilt rows rotate about.
        let lateral = [PIVOT_FRAME, PIVOT_FRAME + 1].map(|f| {
            let axis = chain[f].rotation.column(2).into_owned();
            base_acceleration.dot(&axis.cross(&hang))
        });
        let current = PendulumState {
            angle: state.joints.unactuated(),
            velocity: state.pendulum_velocities,
        };
        let limits = &self.kinematics.limits;
        pendulum::integrate(
            current,
            equilibrium,
            lateral,
            dt,
            &self.config.pendulum,
            UNACTUATED.map(|j| limits.lower[j]),
            UNACTUATED.map(|j| limits.upper[j]),
        )
    }

    fn update_grasp(&self, state: &mut SimState, grapple: &GrappleFrame) {
        let width = jaw_width_unchecked(state.joints[JAW], &self.kinematics);
        let rotation = grapple.rotation();
        match state.attachment {
            Some(_) if releases(width, state.log.diameter) => {
                state.attachment = None;
                // Dropped logs settle on the ground below.
                state.log.position.z = state.log.diameter / 2.0;
            }
            Some(a) => {
                state.log.position = grapple.position + rotation * a.relative_position;
                state.log.yaw = yaw_of_axis(&(rotation * a.relative_axis));
            }
            None => {
                let axis = log_axis_vector(state.log.yaw);
                let geometry = grasp_geometry(grapple, &state.log.position, &axis);
                if captures(
                    &geometry,
                    width,
                    state.log.diameter,
                    state.log.length,
                    self.config.align_tolerance,
                ) {
                    state.attachment = Some(Attachment {
                        relative_position: rotation.transpose() * (state.log.position - grapple.position),
                        relative_axis: rotation.transpose() * axis,
                        axial_offset: geometry.axial,
                        time: state.sim_time,
                    });
                }
            }
        }
    }

    /// Log center in grapple coordinates; constant while attached.
    pub fn log_in_grapple_frame(&self, state: &SimState) -> Vector3<f64> {
        let g = self.grapple(state);
        g.rotation().transpose() * (state.log.position - g.position)
    }
}

/// Tip/tilt angles that make the rotator axis point straight down, given the
/// orientation of the pivot frame. Picks the branch with |q5| ≤ π/2.
pub fn hanging_equilibrium(pivot_rotation: &Matrix3<f64>) -> [f64; 2] {
    // Rotator axis in pivot coordinates is −(sin q6 cos q5, sin q6 sin q5, cos q6);
    // setting it to Rᵀ(0,0,−1) gives the spherical angles of Rᵀ e_z.
    let m = pivot_rotation.transpose() * Vector3::z();
    let mut tilt = m.z.clamp(-1.0, 1.0).acos();
    let mut tip = m.y.atan2(m.x);
    if tip > FRAC_PI_2 {
        tip -= PI;
        tilt = -tilt;
    } else if tip < -FRAC_PI_2 {
        tip += PI;
        tilt = -tilt;
    }
    [tip, tilt]
}
