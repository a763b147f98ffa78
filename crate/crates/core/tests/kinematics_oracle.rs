//! Forward kinematics against an independent elementary-matrix oracle.

mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use crane_grasp::kinematics::{
    clamp_to_limits, default_dh_table, dh_transform, forward_kinematics, DhRow, JointLimits, JointVector,
    KinematicsConfig,
};
use crane_grasp::Error;
use common::{elementary, fk_oracle, random_q};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_matrix_product_oracle() {
    let cfg = KinematicsConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let q = random_q(&mut rng);
        let g = forward_kinematics(&q, &cfg).unwrap();
        let (p, r) = fk_oracle(&q.0);
        for i in 0..3 {
            assert!((g.position[i] - p[i]).abs() <= 1e-9);
            assert!((g.x_axis[i] - r[i][0]).abs() <= 1e-9);
            assert!((g.y_axis[i] - r[i][1]).abs() <= 1e-9);
            assert!((g.z_axis[i] - r[i][2]).abs() <= 1e-9);
        }
        assert!(g.orthonormality_error() <= 1e-9);
    }
}

#[test]
fn zero_configuration_golden_pose() {
    let g = forward_kinematics(&JointVector::zeros(), &KinematicsConfig::default()).unwrap();
    let expect_p = [3.07, 0.88, -0.7];
    let expect_r = [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]];
    for i in 0..3 {
        assert!((g.position[i] - expect_p[i]).abs() < 1e-12);
        assert!((g.x_axis[i] - expect_r[i][0]).abs() < 1e-12);
        assert!((g.y_axis[i] - expect_r[i][1]).abs() < 1e-12);
        assert!((g.z_axis[i] - expect_r[i][2]).abs() < 1e-12);
    }
}

#[test]
fn dh_transform_examples() {
    let zero = dh_transform(&DhRow::fixed(0.0, 0.0, 0.0, 0.0), 0.0).unwrap();
    assert_eq!(zero.to_matrix(), nalgebra::Matrix4::identity());

    let rot = dh_transform(&DhRow::fixed(FRAC_PI_2, 0.0, 0.0, 0.0), 0.0).unwrap();
    let x = rot.rotation * nalgebra::Vector3::x();
    assert!((x - nalgebra::Vector3::y()).norm() < 1e-15);

    let row1 = default_dh_table()[0];
    let h = dh_transform(&row1, 0.0).unwrap().to_matrix();
    let o = elementary(0.0, 2.4, 0.18, FRAC_PI_2);
    for i in 0..4 {
        for j in 0..4 {
            assert!((h[(i, j)] - o[i][j]).abs() < 1e-15);
        }
    }
    assert_eq!(h.fixed_view::<3, 1>(0, 3).into_owned(), nalgebra::Vector3::new(0.18, 0.0, 2.4));

    assert!(matches!(dh_transform(&row1, f64::NAN), Err(Error::InvalidArgument(_))));
}

#[test]
fn limit_violation_names_joint() {
    let mut q = JointVector::zeros();
    q[2] = 5.0;
    match forward_kinematics(&q, &KinematicsConfig::default()) {
        Err(Error::JointLimit { joint, .. }) => assert_eq!(joint, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn telescope_moves_twice() {
    let cfg = KinematicsConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let mut q = random_q(&mut rng);
        q[3] = q[3].min(4.3);
        let a = forward_kinematics(&q, &cfg).unwrap();
        q[3] += 0.1;
        let b = forward_kinematics(&q, &cfg).unwrap();
        // Telescope direction: z of frame 4 (the first prismatic stage).
        let chain = crane_grasp::kinematics::frame_chain(&q, &cfg.dh);
        let axis = chain[2].rotation.column(2).into_owned();
        let delta = b.position - a.position;
        assert!((delta - 0.2 * axis).norm() < 1e-12);
    }
}

proptest! {
    #[test]
    fn slew_rotates_about_base(seed in 0u64..1000, delta in -PI..PI) {
        let cfg = KinematicsConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = random_q(&mut rng);
        q[0] = q[0].clamp(-3.71 + PI, 3.71 - PI);
        let a = forward_kinematics(&q, &cfg).unwrap();
        q[0] += delta;
        let b = forward_kinematics(&q, &cfg).unwrap();
        let (s, c) = delta.sin_cos();
        prop_assert!((b.position.z - a.position.z).abs() < 1e-12);
        prop_assert!((b.position.x - (c * a.position.x - s * a.position.y)).abs() < 1e-12);
        prop_assert!((b.position.y - (s * a.position.x + c * a.position.y)).abs() < 1e-12);
    }

    #[test]
    fn frames_stay_orthonormal(seed in 0u64..10_000) {
        let cfg = KinematicsConfig::default();
        let q = random_q(&mut ChaCha8Rng::seed_from_u64(seed));
        for t in crane_grasp::kinematics::frame_chain(&q, &cfg.dh) {
            prop_assert!(t.orthonormality_error() < 1e-9);
            prop_assert!((t.rotation.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn clamping_is_idempotent(v in prop::array::uniform8(-20.0f64..20.0)) {
        let lim = JointLimits::default();
        let (c, flags) = clamp_to_limits(&JointVector(v), &lim);
        let (c2, flags2) = clamp_to_limits(&c, &lim);
        prop_assert_eq!(c, c2);
        prop_assert!(flags2.iter().all(|f| !f));
        prop_assert!(!flags[6]);
        for j in 0..8 {
            if lim.is_bounded(j) {
                prop_assert!(c[j] >= lim.lower[j] && c[j] <= lim.upper[j]);
            }
        }
    }
}
