//! Damped, base-driven pendulum model for the unactuated tip (q5) and tilt
//! (q6) joints.
//!
//! Each axis is integrated independently:
//! `q̈ = −(g/L)·sin(q − q_eq) − c·q̇ − κ·(a_base · t)` where `t` is the
//! direction the grapple moves for a positive joint rotation.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumConfig {
    /// Suspension length scale L (m).
    pub length: f64,
    /// Viscous damping c (1/s).
    pub damping: f64,
    /// Coupling κ from lateral pivot acceleration (1/m).
    pub drive_gain: f64,
    pub gravity: f64,
    /// Integration substeps per simulator step.
    pub substeps: usize,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            length: 0.8,
            damping: 1.0,
            drive_gain: 1.0 / 0.8,
            gravity: 9.81,
            substeps: 5,
        }
    }
}

/// Angles and rates of the two swinging joints.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub angle: [f64; 2],
    pub velocity: [f64; 2],
}

impl PendulumState {
    /// Oscillation energy per unit inertia of one axis, zero at rest in
    /// equilibrium.
    pub fn energy(&self, axis: usize, equilibrium: f64, cfg: &PendulumConfig) -> f64 {
        let w2 = cfg.gravity / cfg.length;
        0.5 * self.velocity[axis].powi(2) + w2 * (1.0 - (self.angle[axis] - equilibrium).cos())
    }
}

/// Advances both axes by `dt`.
///
/// `lateral_acceleration[i]` is the pivot acceleration projected on axis
/// `i`'s swing direction. Stops at `lower`/`upper` are inelastic: the angle
/// is held at the stop and the rate zeroed. Returns which stops were hit.
pub fn integrate(
    state: PendulumState,
    equilibrium: [f64; 2],
    lateral_acceleration: [f64; 2],
    dt: f64,
    cfg: &PendulumConfig,
    lower: [f64; 2],
    upper: [f64; 2],
) -> (PendulumState, [bool; 2]) {
    let n = cfg.substeps.max(1);
    let h = dt / n as f64;
    let w2 = cfg.gravity / cfg.length;
    let mut s = state;
    let mut hit = [false; 2];
    for _ in 0..n {
        for i in 0..2 {
            let acc = -w2 * (s.angle[i] - equilibrium[i]).sin()
                - cfg.damping * s.velocity[i]
                - cfg.drive_gain * lateral_acceleration[i];
            s.velocity[i] += acc * h;
            s.angle[i] += s.velocity[i] * h;
            if s.angle[i] < lower[i] {
                s.angle[i] = lower[i];
                s.velocity[i] = 0.0;
                hit[i] = true;
            } else if s.angle[i] > upper[i] {
                s.angle[i] = upper[i];
                s.velocity[i] = 0.0;
                hit[i] = true;
            }
        }
    }
    (s, hit)
}
