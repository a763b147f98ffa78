//! Relative pose quantities shared by observations, rewards and the grasp model.

use nalgebra::Vector3;

use crate::kinematics::GrappleFrame;

/// Augmented relative distance `Δp = [x_l, y_l, z_l − d_off]ᵀ − p_C` with
/// `d_off = (d_max_log − z_l)/2`.
pub fn relative_distance(
    grapple: &GrappleFrame,
    log_center: &Vector3<f64>,
    max_log_diameter: f64,
) -> Vector3<f64> {
    target_point(log_center, max_log_diameter) - grapple.position
}

/// The point the grapple center is steered to for a log centered at `log_center`.
pub fn target_point(log_center: &Vector3<f64>, max_log_diameter: f64) -> Vector3<f64> {
    let z = log_center.z;
    let offset = (max_log_diameter - z) / 2.0;
    Vector3::new(log_center.x, log_center.y, z - offset)
}

/// Unit vector along the log for yaw `ψ_l`.
pub fn log_axis_vector(yaw: f64) -> Vector3<f64> {
    let (s, c) = yaw.sin_cos();
    Vector3::new(-s, c, 0.0)
}

/// `Δψ = 1 − |e_C,x · e_l,y|`, clamped into [0, 1] against rounding.
pub fn angle_distance(grapple_x: &Vector3<f64>, log_axis: &Vector3<f64>) -> f64 {
    (1.0 - grapple_x.dot(log_axis).abs()).clamp(0.0, 1.0)
}

/// Yaw of a (possibly tilted) log axis, from its horizontal projection.
pub fn yaw_of_axis(axis: &Vector3<f64>) -> f64 {
    (-axis.x).atan2(axis.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn frame_at(p: Vector3<f64>, x: Vector3<f64>) -> GrappleFrame {
        GrappleFrame {
            position: p,
            x_axis: x,
            y_axis: Vector3::z().cross(&x),
            z_axis: -Vector3::z(),
        }
    }

    #[test]
    fn offset_target() {
        let t = target_point(&Vector3::new(1.0, 2.0, 0.4), 0.8);
        assert!((t.z - 0.2).abs() < 1e-15);
    }

    #[test]
    fn distance_examples() {
        let g = frame_at(Vector3::zeros(), Vector3::x());
        let d = relative_distance(&g, &Vector3::new(3.0, 4.0, 0.4), 0.8);
        assert!((d - Vector3::new(3.0, 4.0, 0.2)).norm() < 1e-15);
        assert!((d.norm() - 5.004).abs() < 5e-4);
        // Coincident with the augmented target.
        let g = frame_at(Vector3::new(3.0, 4.0, 0.2), Vector3::x());
        assert!(relative_distance(&g, &Vector3::new(3.0, 4.0, 0.4), 0.8).norm() < 1e-15);
    }

    #[test]
    fn axis_examples() {
        assert!((log_axis_vector(0.0) - Vector3::y()).norm() < 1e-15);
        assert!((log_axis_vector(FRAC_PI_2) + Vector3::x()).norm() < 1e-15);
        let v = log_axis_vector(FRAC_PI_4);
        assert!((v.x + 0.5f64.sqrt()).abs() < 1e-15 && (v.y - 0.5f64.sqrt()).abs() < 1e-15);
        for yaw in [-3.0, 0.3, 2.2, 7.0] {
            assert!((log_axis_vector(yaw).norm() - 1.0).abs() < 1e-15);
            let back = yaw_of_axis(&log_axis_vector(yaw));
            assert!((log_axis_vector(back) - log_axis_vector(yaw)).norm() < 1e-12);
            assert!(back.abs() <= PI);
        }
    }

    #[test]
    fn angle_distance_examples() {
        assert_eq!(angle_distance(&Vector3::y(), &Vector3::y()), 0.0);
        assert_eq!(angle_distance(&Vector3::x(), &Vector3::y()), 1.0);
        let d = angle_distance(&Vector3::x(), &log_axis_vector(FRAC_PI_4));
        assert!((d - (1.0 - 2f64.sqrt() / 2.0)).abs() < 1e-12);
        assert!((d - 0.29289).abs() < 1e-5);
    }
}
