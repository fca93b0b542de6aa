mod common;

use common::*;
use proptest::prelude::*;
use splatsim_core::kinematics::{
    deform_covariance_incremental, deform_covariance_total, orthonormality_drift, rotate_view_direction,
    update_sh_rotation, KernelKinematicState, KinematicsMode,
};
use splatsim_core::{Mat3, SimError, Vec3};

fn spin_z(omega: f64) -> Mat3 {
    Mat3::new(0.0, -omega, 0.0, omega, 0.0, 0.0, 0.0, 0.0, 0.0)
}

fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

#[test]
fn view_direction_follows_the_inverse_rotation() {
    let r = rot_z(std::f64::consts::FRAC_PI_2);
    let d = rotate_view_direction(&Vec3::x(), &r);
    assert!((d - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-15);
}

#[test]
fn a_million_composed_steps_stay_orthonormal() {
    let mut rng = rng(11);
    let mut r = Mat3::identity();
    let mut worst = 0.0f64;
    for step in 0..1_000_000u32 {
        if step % 1000 == 0 {
            worst = worst.max(orthonormality_drift(&r));
        }
        let g = random_f(&mut rng, -1.0, 1.0) * 0.5;
        r = update_sh_rotation(&r, &g, 1e-3).unwrap();
    }
    worst = worst.max(orthonormality_drift(&r));
    assert!(worst <= 1e-8, "{worst:e}");
    assert!((r.determinant() - 1.0).abs() < 1e-8);
}

#[test]
fn incremental_state_with_projection_stays_orthonormal() {
    let mut st = KernelKinematicState::new(Mat3::from_diagonal(&Vec3::new(1.0, 2.0, 3.0)), KinematicsMode::Incremental);
    let g = spin_z(1.0);
    for _ in 0..100_000 {
        st.advance(&g, 1e-4).unwrap();
        assert!(orthonormality_drift(&st.r_sh) <= 1e-8);
    }
    // ten radians of rotation
    assert!((st.r_sh - rot_z(10.0)).amax() < 1e-6);
}

#[test]
fn total_mode_is_exact_for_a_pure_stretch() {
    let a0 = Mat3::from_diagonal(&Vec3::new(1.0, 4.0, 9.0));
    let mut st = KernelKinematicState::new(a0, KinematicsMode::TotalF);
    let g = Mat3::from_diagonal(&Vec3::new(1.0, 0.0, -0.5));
    let dt = 1e-2;
    for _ in 0..50 {
        st.advance(&g, dt).unwrap();
    }
    let f = Mat3::from_diagonal(&Vec3::new(1.01f64.powi(50), 1.0, 0.995f64.powi(50)));
    assert!(rel_err(&st.a, &(f * a0 * f)) < 1e-13);
    assert!((st.r_sh - Mat3::identity()).amax() < 1e-14);
}

#[test]
fn export_round_trips_the_covariance() {
    let mut rng = rng(12);
    for _ in 0..100 {
        let rest = random_kernel(&mut rng, 1);
        let mut st = KernelKinematicState::from_kernel(&rest, KinematicsMode::TotalF);
        let g = random_f(&mut rng, -1.0, 1.0);
        st.advance(&g, 0.05).unwrap();
        let out = st.export(&rest, Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(out.center, Vec3::new(1.0, 2.0, 3.0));
        assert!(rel_err(&out.covariance(), &st.a) < 1e-10);
        let r = out.sh_rotation_matrix();
        assert!((r - st.r_sh * rest.sh_rotation_matrix()).amax() < 1e-10);
    }
}

#[test]
fn rest_state_exports_unchanged() {
    let rest = random_kernel(&mut rng(13), 2);
    let st = KernelKinematicState::from_kernel(&rest, KinematicsMode::Incremental);
    let out = st.export(&rest, rest.center);
    assert_eq!(out, rest);
}

#[test]
fn failures_are_reported() {
    let a0 = Mat3::identity();
    let flip = Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0));
    assert!(matches!(deform_covariance_total(&a0, &flip), Err(SimError::DegenerateDeformation { .. })));
    let crush = Mat3::from_diagonal(&Vec3::new(-100.0, 0.0, 0.0));
    assert!(matches!(deform_covariance_incremental(&a0, &crush, 0.1), Err(SimError::Timestep(_))));
    let mut st = KernelKinematicState::new(a0, KinematicsMode::TotalF);
    assert!(st.advance(&Mat3::repeat(f64::NAN), 0.1).is_err());
}

proptest! {
    #[test]
    fn covariance_updates_stay_symmetric_positive(seed in 0u64..5_000) {
        let mut rng = rng(seed);
        let a = random_kernel(&mut rng, 0).covariance();
        let g = random_f(&mut rng, -1.0, 1.0);
        let dt = 0.01;
        let inc = deform_covariance_incremental(&a, &g, dt).unwrap();
        let tot = deform_covariance_total(&a, &(Mat3::identity() + g * dt)).unwrap();
        for m in [inc, tot] {
            prop_assert_eq!(m, m.transpose());
            prop_assert!(m.symmetric_eigenvalues().min() > 0.0);
        }
        // the two agree to first order in dt
        prop_assert!(rel_err(&inc, &tot) < 1e-3);
    }

    #[test]
    fn sh_rotation_update_is_a_rotation(seed in 0u64..5_000) {
        let mut rng = rng(seed);
        let r = random_rotation(&mut rng);
        let g = random_f(&mut rng, -2.0, 2.0);
        let next = update_sh_rotation(&r, &g, 0.01).unwrap();
        prop_assert!(orthonormality_drift(&next) < 1e-12);
        prop_assert!((next.determinant() - 1.0).abs() < 1e-12);
    }
}
