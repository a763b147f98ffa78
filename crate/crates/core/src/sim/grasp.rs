//! Geometric stand-in for grapple/log contact.
//!
//! The log is captured when the grapple center lies inside the closing jaw
//! envelope around the log axis, the grapple is aligned with the log, and
//! the jaws have closed below the log diameter.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::env::geometry::angle_distance;
use crate::kinematics::GrappleFrame;

/// Log pose captured in grapple coordinates at the moment of attachment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    /// `R_Cᵀ (p_l − p_C)`.
    pub relative_position: Vector3<f64>,
    /// `R_Cᵀ e_l,y`.
    pub relative_axis: Vector3<f64>,
    /// Signed offset of `p_C` from the log center along the log axis.
    pub axial_offset: f64,
    /// Simulation time of attachment (s).
    pub time: f64,
}

/// Where the grapple center sits relative to a log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraspGeometry {
    /// Distance from `p_C` to the log axis, in the plane normal to the axis.
    pub radial: f64,
    /// Signed offset of `p_C` along the axis from the log center.
    pub axial: f64,
    /// Angle distance Δψ between `e_C,x` and the log axis.
    pub misalignment: f64,
}

pub fn grasp_geometry(
    grapple: &GrappleFrame,
    log_center: &Vector3<f64>,
    log_axis: &Vector3<f64>,
) -> GraspGeometry {
    let r = grapple.position - log_center;
    let axial = r.dot(log_axis);
    GraspGeometry {
        radial: (r - axial * log_axis).norm(),
        axial,
        misalignment: angle_distance(&grapple.x_axis, log_axis),
    }
}

/// Attachment predicate for an unattached log.
pub fn captures(
    geometry: &GraspGeometry,
    jaw_width: f64,
    diameter: f64,
    length: f64,
    align_tolerance: f64,
) -> bool {
    geometry.radial <= 0.5 * jaw_width
        && geometry.axial.abs() <= 0.5 * length
        && geometry.misalignment <= align_tolerance
        && jaw_width < diameter
}

/// An attached log is released once the jaws reopen wider than the log.
pub fn releases(jaw_width: f64, diameter: f64) -> bool {
    jaw_width > diameter
}
