//! Denavit-Hartenberg forward kinematics of the 8-DoF forestry crane.
//!
//! Joint numbering follows the crane: q1 slew, q2 boom, q3 arm, q4 telescope
//! (two synchronized prismatic stages), q5 tip and q6 tilt (both unactuated),
//! q7 rotator and q8 grapple jaws. Indices into [`JointVector`] are 0-based,
//! everything user-facing (errors, config) is 1-based.

use std::f64::consts::FRAC_PI_2;
use std::ops::{Index, IndexMut};

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_JOINTS: usize = 8;
pub const N_ACTUATED: usize = 6;

/// Positions of the actuated joints q1, q2, q3, q4, q7, q8 inside a [`JointVector`].
pub const ACTUATED: [usize; N_ACTUATED] = [0, 1, 2, 3, 6, 7];
/// Positions of the free-swinging tip (q5) and tilt (q6) joints.
pub const UNACTUATED: [usize; 2] = [4, 5];

/// Index of the grapple jaw joint q8.
pub const JAW: usize = 7;

/// Full configuration `q = [q1..q8]`; radians except q4 in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointVector(pub [f64; N_JOINTS]);

impl JointVector {
    pub fn zeros() -> Self {
        Self([0.0; N_JOINTS])
    }

    pub fn actuated(&self) -> [f64; N_ACTUATED] {
        ACTUATED.map(|i| self.0[i])
    }

    pub fn unactuated(&self) -> [f64; 2] {
        UNACTUATED.map(|i| self.0[i])
    }

    pub fn set_actuated(&mut self, values: [f64; N_ACTUATED]) {
        for (k, &i) in ACTUATED.iter().enumerate() {
            self.0[i] = values[k];
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Index<usize> for JointVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for JointVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Position ranges for all joints and speed limits for the actuated ones.
///
/// The rotator q7 is unbounded and carries `±inf` limits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointLimits {
    pub lower: [f64; N_JOINTS],
    pub upper: [f64; N_JOINTS],
    /// Max speed of q1, q2, q3, q4, q7, q8 (rad/s, m/s for q4).
    pub max_speed: [f64; N_ACTUATED],
}

impl Default for JointLimits {
    fn default() -> Self {
        Self {
            lower: [-3.71, -1.2, -0.91, 0.0, -1.57, -0.79, f64::NEG_INFINITY, 0.0],
            upper: [3.71, 1.56, 4.6, 4.47, 1.57, 2.36, f64::INFINITY, 3.0],
            max_speed: [0.5, 0.4, 0.5, 0.5, 1.0, 1.5],
        }
    }
}

impl JointLimits {
    pub fn is_bounded(&self, joint: usize) -> bool {
        self.lower[joint].is_finite() && self.upper[joint].is_finite()
    }

    pub fn validate(&self) -> Result<()> {
        for j in 0..N_JOINTS {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo.is_nan() || hi.is_nan() || lo >= hi {
                return Err(Error::config(
                    format!("kinematics.limits[q{}]", j + 1),
                    format!("degenerate range [{lo}, {hi}]"),
                ));
            }
        }
        for (k, &s) in self.max_speed.iter().enumerate() {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::config(
                    format!("kinematics.limits.max_speed[{k}]"),
                    format!("speed limit must be positive, got {s}"),
                ));
            }
        }
        Ok(())
    }

    /// Returns an error naming the first joint outside its range.
    pub fn check(&self, q: &JointVector) -> Result<()> {
        const TOL: f64 = 1e-9;
        for j in 0..N_JOINTS {
            let v = q[j];
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("q{} is not finite", j + 1)));
            }
            if v < self.lower[j] - TOL || v > self.upper[j] + TOL {
                return Err(Error::JointLimit {
                    joint: j + 1,
                    value: v,
                    min: self.lower[j],
                    max: self.upper[j],
                });
            }
        }
        Ok(())
    }
}

/// Which DH variable a joint value is added to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DhVariable {
    Theta,
    D,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DhBinding {
    /// 1-based joint number (q1..q8).
    pub joint: usize,
    pub variable: DhVariable,
}

/// One row of the DH table: constant parts plus an optional joint binding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DhRow {
    pub theta: f64,
    pub d: f64,
    pub a: f64,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binding: Option<DhBinding>,
}

impl DhRow {
    pub const fn fixed(theta: f64, d: f64, a: f64, alpha: f64) -> Self {
        Self {
            theta,
            d,
            a,
            alpha,
            binding: None,
        }
    }

    const fn revolute(joint: usize, d: f64, a: f64, alpha: f64) -> Self {
        Self {
            theta: 0.0,
            d,
            a,
            alpha,
            binding: Some(DhBinding {
                joint,
                variable: DhVariable::Theta,
            }),
        }
    }

    const fn prismatic(joint: usize, theta: f64, d: f64, a: f64, alpha: f64) -> Self {
        Self {
            theta,
            d,
            a,
            alpha,
            binding: Some(DhBinding {
                joint,
                variable: DhVariable::D,
            }),
        }
    }

    /// The joint value this row reads from `q`, or 0 for a fixed row.
    pub fn joint_value(&self, q: &JointVector) -> f64 {
        self.binding.map_or(0.0, |b| q[b.joint - 1])
    }
}

/// The 8-row crane table. Rows 4 and 5 both translate by q4: the two
/// synchronized telescope stages.
pub fn default_dh_table() -> Vec<DhRow> {
    vec![
        DhRow::revolute(1, 2.4, 0.18, FRAC_PI_2),
        DhRow::revolute(2, 0.0, 3.5, 0.0),
        DhRow::revolute(3, 0.0, -0.4, FRAC_PI_2),
        DhRow::prismatic(4, 0.0, 3.1, 0.0, 0.0),
        DhRow::prismatic(4, 0.0, 0.0, 0.0, -FRAC_PI_2),
        DhRow::revolute(5, 0.0, -0.21, -FRAC_PI_2),
        DhRow::revolute(6, 0.0, 0.0, -FRAC_PI_2),
        DhRow::revolute(7, 0.58, 0.0, 0.0),
    ]
}

/// Geometry of the crane: DH chain, limits and grapple model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinematicsConfig {
    pub dh: Vec<DhRow>,
    pub limits: JointLimits,
    /// Distance from frame 8 to the grapple center along frame 8's z axis.
    pub grapple_offset: f64,
    /// Jaw opening width at q8 = 0 (fully open), meters.
    pub jaw_max_width: f64,
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        Self {
            dh: default_dh_table(),
            limits: JointLimits::default(),
            grapple_offset: 0.3,
            jaw_max_width: 1.6,
        }
    }
}

impl KinematicsConfig {
    pub fn validate(&self) -> Result<()> {
        self.limits.validate()?;
        for (i, row) in self.dh.iter().enumerate() {
            if let Some(b) = row.binding {
                if b.joint == 0 || b.joint > N_JOINTS {
                    return Err(Error::config(
                        format!("kinematics.dh[{i}].binding.joint"),
                        format!("joint {} does not exist", b.joint),
                    ));
                }
            }
        }
        if !(self.jaw_max_width > 0.0) {
            return Err(Error::config("kinematics.jaw_max_width", "must be positive"));
        }
        Ok(())
    }

    /// Jaw joint upper limit q̄8.
    pub fn jaw_closed(&self) -> f64 {
        self.limits.upper[JAW]
    }
}

/// Rigid transform `H = [R d; 0 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl PoseTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn compose(&self, next: &PoseTransform) -> PoseTransform {
        PoseTransform {
            rotation: self.rotation * next.rotation,
            translation: self.rotation * next.translation + self.translation,
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Max deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let det = (self.rotation.determinant() - 1.0).abs();
        gram.amax().max(det)
    }
}

/// `Rot_z(θ) · Trans_z(d) · Trans_x(a) · Rot_x(α)` with `q_value` added to
/// θ or d according to the row binding.
pub fn dh_transform(row: &DhRow, q_value: f64) -> Result<PoseTransform> {
    if ![row.theta, row.d, row.a, row.alpha, q_value]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(Error::InvalidArgument(format!(
            "non-finite DH input (row {row:?}, q = {q_value})"
        )));
    }
    Ok(dh_transform_unchecked(row, q_value))
}

fn dh_transform_unchecked(row: &DhRow, q_value: f64) -> PoseTransform {
    let (mut theta, mut d) = (row.theta, row.d);
    match row.binding.map(|b| b.variable) {
        Some(DhVariable::Theta) => theta += q_value,
        Some(DhVariable::D) => d += q_value,
        None => {}
    }
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = row.alpha.sin_cos();
    PoseTransform {
        rotation: Matrix3::new(ct, -st * ca, st * sa, st, ct * ca, -ct * sa, 0.0, sa, ca),
        translation: Vector3::new(row.a * ct, row.a * st, d),
    }
}

/// Base-frame poses of every DH frame `F_1 .. F_n`, without limit checks.
pub fn frame_chain(q: &JointVector, dh: &[DhRow]) -> Vec<PoseTransform> {
    let mut acc = PoseTransform::identity();
    dh.iter()
        .map(|row| {
            acc = acc.compose(&dh_transform_unchecked(row, row.joint_value(q)));
            acc
        })
        .collect()
}

/// Grapple-center frame `H_C`: axes `e_C,x/y/z` and position `p_C`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrappleFrame {
    pub position: Vector3<f64>,
    pub x_axis: Vector3<f64>,
    pub y_axis: Vector3<f64>,
    pub z_axis: Vector3<f64>,
}

impl GrappleFrame {
    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.x_axis, self.y_axis, self.z_axis])
    }

    /// Largest deviation from an orthonormal right-handed triad.
    pub fn orthonormality_error(&self) -> f64 {
        PoseTransform {
            rotation: self.rotation(),
            translation: self.position,
        }
        .orthonormality_error()
    }
}

/// Grapple frame for `q`, which must be within limits.
pub fn forward_kinematics(q: &JointVector, cfg: &KinematicsConfig) -> Result<GrappleFrame> {
    cfg.limits.check(q)?;
    Ok(grapple_frame(q, cfg))
}

/// Same as [`forward_kinematics`] without the range check; used inside the
/// simulator where the state is already clamped.
pub fn grapple_frame(q: &JointVector, cfg: &KinematicsConfig) -> GrappleFrame {
    let last = frame_chain(q, &cfg.dh)
        .pop()
        .unwrap_or_else(PoseTransform::identity);
    grapple_from_wrist(&last, cfg.grapple_offset)
}

pub(crate) fn grapple_from_wrist(wrist: &PoseTransform, offset: f64) -> GrappleFrame {
    let r = wrist.rotation;
    let z = r.column(2).into_owned();
    GrappleFrame {
        position: wrist.translation + offset * z,
        x_axis: r.column(0).into_owned(),
        y_axis: r.column(1).into_owned(),
        z_axis: z,
    }
}

/// Clamps every bounded joint into range. Flags mark the clamped joints; the
/// unbounded rotator is never flagged.
pub fn clamp_to_limits(q: &JointVector, limits: &JointLimits) -> (JointVector, [bool; N_JOINTS]) {
    let mut out = *q;
    let mut flags = [false; N_JOINTS];
    for j in 0..N_JOINTS {
        if !limits.is_bounded(j) {
            continue;
        }
        let v = q[j];
        if v < limits.lower[j] {
            out[j] = limits.lower[j];
            flags[j] = true;
        } else if v > limits.upper[j] {
            out[j] = limits.upper[j];
            flags[j] = true;
        }
    }
    (out, flags)
}

/// Linear jaw model: `w_max` at q8 = 0 down to zero at q̄8.
pub fn jaw_opening_width(q8: f64, cfg: &KinematicsConfig) -> Result<f64> {
    let closed = cfg.jaw_closed();
    if !(0.0..=closed).contains(&q8) {
        return Err(Error::InvalidArgument(format!(
            "q8 = {q8} outside [0, {closed}]"
        )));
    }
    Ok(jaw_width_unchecked(q8, cfg))
}

pub(crate) fn jaw_width_unchecked(q8: f64, cfg: &KinematicsConfig) -> f64 {
    cfg.jaw_max_width * (1.0 - q8 / cfg.jaw_closed())
}
