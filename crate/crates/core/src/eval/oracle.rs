//! Scripted waypoint controller with privileged access to the true log pose.
//!
//! Resolved-rate control of the plumb-hanging grapple center: damped least
//! squares on a finite-difference Jacobian of q1..q4, a null-space pull away
//! from joint limits, q7 for yaw alignment and q8 for the jaw.

use nalgebra::{Matrix3, SMatrix, Vector3, Vector4};

use crate::env::geometry::{log_axis_vector, target_point};
use crate::env::{wrap_angle, ActionCommand, GraspEnv, Observation};
use crate::error::Result;
use crate::eval::Controller;
use crate::kinematics::{JointVector, GrappleFrame, JAW, N_ACTUATED, UNACTUATED};
use crate::sim::{SimState, Simulator};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Drive to the reward's target point until proximity registers.
    Reach,
    /// Move up to the log center and let the swing settle.
    Center,
    Close,
    Lift,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleGains {
    pub position_gain: f64,
    pub max_speed: f64,
    pub max_accel: f64,
    pub yaw_gain: f64,
    pub jaw_gain: f64,
    pub damping: f64,
    pub null_gain: f64,
    /// Jaw width kept beyond the log diameter while approaching (m).
    pub open_margin: f64,
    /// Fraction of full closure commanded when gripping.
    pub close_fraction: f64,
    /// Center-phase tolerance on the grapple position (m).
    pub center_tolerance: f64,
    /// Give up settling and close after this long in the center phase (s).
    pub settle_timeout: f64,
}

impl Default for OracleGains {
    fn default() -> Self {
        Self {
            position_gain: 2.0,
            max_speed: 1.5,
            max_accel: 2.0,
            yaw_gain: 3.0,
            jaw_gain: 5.0,
            damping: 0.05,
            null_gain: 0.5,
            open_margin: 0.3,
            close_fraction: 0.97,
            center_tolerance: 0.06,
            settle_timeout: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OracleController {
    pub gains: OracleGains,
    pub phase: Phase,
    velocity: Vector3<f64>,
    phase_start: f64,
}

impl Default for OracleController {
    fn default() -> Self {
        Self::new(OracleGains::default())
    }
}

const FD_STEP: f64 = 1e-6;

fn plumb(sim: &Simulator, q: &JointVector) -> JointVector {
    let mut q = *q;
    let eq = sim.hanging_equilibrium(&q);
    for (k, &j) in UNACTUATED.iter().enumerate() {
        q[j] = eq[k];
    }
    q
}

fn plumb_grapple(sim: &Simulator, q: &JointVector) -> (GrappleFrame, [f64; 2]) {
    let p = plumb(sim, q);
    (sim.grapple_for(&p), [p[UNACTUATED[0]], p[UNACTUATED[1]]])
}

fn heading(g: &GrappleFrame) -> f64 {
    g.x_axis.y.atan2(g.x_axis.x)
}

/// Heading error folded into (−π/2, π/2]: the jaws are symmetric under a
/// half turn.
fn axis_error(target: f64, current: f64) -> f64 {
    let mut e = wrap_angle(target - current);
    if e > std::f64::consts::FRAC_PI_2 {
        e -= std::f64::consts::PI;
    } else if e <= -std::f64::consts::FRAC_PI_2 {
        e += std::f64::consts::PI;
    }
    e
}

/// Soft penalty rising steeply near either end of a range.
fn margin_cost(v: f64, lo: f64, hi: f64) -> f64 {
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    ((v - mid) / half).powi(8)
}

impl OracleController {
    pub fn new(gains: OracleGains) -> Self {
        Self {
            gains,
            phase: Phase::Reach,
            velocity: Vector3::zeros(),
            phase_start: 0.0,
        }
    }

    fn enter(&mut self, phase: Phase, t: f64) {
        self.phase = phase;
        self.phase_start = t;
    }

    fn posture_cost(sim: &Simulator, q: &JointVector) -> f64 {
        let lim = &sim.kinematics.limits;
        let (_, eq) = plumb_grapple(sim, q);
        let mut c = 0.0;
        for j in 1..4 {
            c += margin_cost(q[j], lim.lower[j], lim.upper[j]);
        }
        for (k, &j) in UNACTUATED.iter().enumerate() {
            c += 4.0 * margin_cost(eq[k], lim.lower[j], lim.upper[j]);
        }
        c
    }

    /// Joint rates for q1..q4 and q7 that move the plumb grapple center at
    /// `v` while turning its heading at `heading_rate`.
    fn resolve(&self, sim: &Simulator, q: &JointVector, v: &Vector3<f64>, heading_rate: f64) -> ([f64; 4], f64) {
        let mut jac = SMatrix::<f64, 3, 4>::zeros();
        let mut dh = [0.0; 4];
        let mut grad = Vector4::zeros();
        for j in 0..4 {
            let mut qp = *q;
            let mut qm = *q;
            qp[j] += FD_STEP;
            qm[j] -= FD_STEP;
            let (gp, _) = plumb_grapple(sim, &qp);
            let (gm, _) = plumb_grapple(sim, &qm);
            jac.set_column(j, &((gp.position - gm.position) / (2.0 * FD_STEP)));
            dh[j] = wrap_angle(heading(&gp) - heading(&gm)) / (2.0 * FD_STEP);
            grad[j] = (Self::posture_cost(sim, &qp) - Self::posture_cost(sim, &qm)) / (2.0 * FD_STEP);
        }
        let lambda2 = self.gains.damping * self.gains.damping;
        let jjt = jac * jac.transpose() + Matrix3::identity() * lambda2;
        let inv = jjt.try_inverse().unwrap_or_else(Matrix3::identity);
        let pinv = jac.transpose() * inv;
        let null = SMatrix::<f64, 4, 4>::identity() - pinv * jac;
        let qd = pinv * v - null * grad * self.gains.null_gain;

        let mut qp = *q;
        let mut qm = *q;
        qp[6] += FD_STEP;
        qm[6] -= FD_STEP;
        let dh7 = wrap_angle(heading(&plumb_grapple(sim, &qp).0) - heading(&plumb_grapple(sim, &qm).0)) / (2.0 * FD_STEP);
        let induced: f64 = (0..4).map(|j| dh[j] * qd[j]).sum();
        let q7 = if dh7.abs() > 1e-6 { (heading_rate - induced) / dh7 } else { 0.0 };
        ([qd[0], qd[1], qd[2], qd[3]], q7)
    }

    fn plan(&mut self, env: &GraspEnv, st: &SimState) -> (Vector3<f64>, f64) {
        let sim = &env.sim;
        let g = self.gains.clone();
        let t = st.sim_time;
        let center = st.log.position;
        let q_closed = sim.kinematics.jaw_closed();
        let q_grip = g.close_fraction * q_closed;
        let jaw_max = sim.kinematics.jaw_max_width;
        let open_width = (st.log.diameter + g.open_margin).min(jaw_max);
        let q_open = q_closed * (1.0 - open_width / jaw_max);
        let actual = sim.grapple(st).position;

        if self.phase == Phase::Reach && env.reached() {
            self.enter(Phase::Center, t);
        }
        if self.phase == Phase::Center
            && ((actual - center).norm() < g.center_tolerance || t - self.phase_start > g.settle_timeout)
        {
            self.enter(Phase::Close, t);
        }
        if self.phase == Phase::Close && st.attached() && st.joints[JAW] >= q_grip - 0.02 {
            self.enter(Phase::Lift, t);
        }
        if self.phase == Phase::Close && !st.attached() && st.joints[JAW] >= q_grip - 0.02 {
            // Missed: reopen and try again.
            self.enter(Phase::Center, t);
        }
        if self.phase == Phase::Lift && !st.attached() {
            self.enter(Phase::Center, t);
        }
        match self.phase {
            Phase::Reach => (target_point(&center, env.settings.reward.max_log_diameter), q_open),
            Phase::Center => (center, q_open),
            Phase::Close => (center, q_grip),
            Phase::Lift => {
                let rise = env.settings.reward.lift_target - center.z;
                (sim.grapple(st).position + Vector3::new(0.0, 0.0, rise), q_grip)
            }
        }
    }
}

impl Controller for OracleController {
    fn reset(&mut self, env: &GraspEnv) {
        self.velocity = Vector3::zeros();
        let t = env.state().map_or(0.0, |s| s.sim_time);
        self.enter(Phase::Reach, t);
    }

    fn command(&mut self, env: &GraspEnv, _obs: &Observation) -> Result<ActionCommand> {
        let st = env.state().expect("reset before commanding").clone();
        let sim = &env.sim;
        let dt = sim.config.dt * env.settings.env.action_repeat as f64;
        let (target, q8_target) = self.plan(env, &st);
        let g = self.gains.clone();

        let (plumb_now, _) = plumb_grapple(sim, &st.joints);
        let mut v = (target - plumb_now.position) * g.position_gain;
        if v.norm() > g.max_speed {
            v *= g.max_speed / v.norm();
        }
        let dv = v - self.velocity;
        let max_dv = g.max_accel * dt;
        let v = if dv.norm() > max_dv { self.velocity + dv * (max_dv / dv.norm()) } else { v };
        self.velocity = v;

        let axis = log_axis_vector(st.log.yaw);
        let desired_heading = axis.y.atan2(axis.x);
        let heading_rate = g.yaw_gain * axis_error(desired_heading, heading(&plumb_now));
        let (arm, q7) = self.resolve(sim, &st.joints, &v, heading_rate);
        let q8 = g.jaw_gain * (q8_target - st.joints[JAW]);

        let max = &sim.kinematics.limits.max_speed;
        let mut cmd = [arm[0], arm[1], arm[2], arm[3], q7, q8];
        // Scale the arm rates together so the direction of motion survives.
        let over = (0..4).map(|k| cmd[k].abs() / (0.95 * max[k])).fold(1.0, f64::max);
        for c in cmd.iter_mut().take(4) {
            *c /= over;
        }
        for k in 4..N_ACTUATED {
            cmd[k] = cmd[k].clamp(-0.95 * max[k], 0.95 * max[k]);
        }
        Ok(ActionCommand(cmd))
    }
}
