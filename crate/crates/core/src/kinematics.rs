//! Evolution of kernel covariances and SH orientations from simulated motion.
//!
//! Two integration modes are available. [`KinematicsMode::TotalF`] keeps the
//! product of all per-step deformation increments and sets `a = F A₀ Fᵀ`,
//! with the SH rotation taken from the polar decomposition of that product.
//! [`KinematicsMode::Incremental`] integrates the rate form
//! `ȧ = ∇v a + a ∇vᵀ` with forward Euler and composes per-step rotations.
//! The total form is exact for elastic bodies; the incremental form is what
//! remains available once plastic flow discards part of the deformation.

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::gs_io::{factors_from_covariance, GaussianKernel};
use crate::materials::polar_rotation;
use crate::math::{is_finite_mat, is_spd, quaternion_from_rotation, symmetrize, Mat3, Vec3};

/// Re-orthonormalize accumulated rotations at least this often.
pub const REORTHONORMALIZE_EVERY: u64 = 64;
/// ... or whenever `‖RᵀR − I‖_F` exceeds this.
pub const ROTATION_DRIFT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KinematicsMode {
    TotalF,
    Incremental,
}

/// `F A₀ Fᵀ`.
pub fn deform_covariance_total(a0: &Mat3, f: &Mat3) -> Result<Mat3> {
    let det = f.determinant();
    if !(det > 0.0) {
        return Err(SimError::DegenerateDeformation { det, particle: None });
    }
    Ok(symmetrize(&(f * a0 * f.transpose())))
}

/// One forward-Euler step of `ȧ = ∇v a + a ∇vᵀ`.
pub fn deform_covariance_incremental(a: &Mat3, grad_v: &Mat3, dt: f64) -> Result<Mat3> {
    let next = symmetrize(&(a + (grad_v * a + a * grad_v.transpose()) * dt));
    if !is_spd(&next) {
        return Err(SimError::Timestep(format!(
            "incremental covariance update lost positive definiteness at dt = {dt:e}; reduce dt"
        )));
    }
    Ok(next)
}

/// Rotation part of `(I + dt ∇v) R_prev`.
pub fn update_sh_rotation(r_prev: &Mat3, grad_v: &Mat3, dt: f64) -> Result<Mat3> {
    polar_rotation(&((Mat3::identity() + grad_v * dt) * r_prev))
}

/// Direction at which the rest-pose SH are evaluated: `Rᵀ d`.
pub fn rotate_view_direction(d: &Vec3, r: &Mat3) -> Vec3 {
    r.transpose() * d
}

/// `‖RᵀR − I‖_F`.
pub fn orthonormality_drift(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).norm()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelKinematicState {
    /// Rest covariance.
    pub a0: Mat3,
    /// Current world covariance.
    pub a: Mat3,
    /// Product of all deformation increments so far.
    pub f_total: Mat3,
    pub r_sh: Mat3,
    pub mode: KinematicsMode,
    steps_since_projection: u64,
}

impl KernelKinematicState {
    pub fn new(a0: Mat3, mode: KinematicsMode) -> Self {
        let a0 = symmetrize(&a0);
        Self {
            a0,
            a: a0,
            f_total: Mat3::identity(),
            r_sh: Mat3::identity(),
            mode,
            steps_since_projection: 0,
        }
    }

    pub fn from_kernel(kernel: &GaussianKernel, mode: KinematicsMode) -> Self {
        Self::new(kernel.covariance(), mode)
    }

    /// Advance by one step with velocity gradient `grad_v`.
    pub fn advance(&mut self, grad_v: &Mat3, dt: f64) -> Result<()> {
        let increment = Mat3::identity() + grad_v * dt;
        if !is_finite_mat(&increment) {
            return Err(SimError::Timestep("non-finite velocity gradient".into()));
        }
        match self.mode {
            KinematicsMode::TotalF => {
                self.f_total = increment * self.f_total;
                self.a = deform_covariance_total(&self.a0, &self.f_total)?;
                self.r_sh = polar_rotation(&self.f_total)?;
            }
            KinematicsMode::Incremental => {
                self.f_total = increment * self.f_total;
                self.a = deform_covariance_incremental(&self.a, grad_v, dt)?;
                self.r_sh = update_sh_rotation(&self.r_sh, grad_v, dt)?;
                self.steps_since_projection += 1;
                if self.steps_since_projection >= REORTHONORMALIZE_EVERY
                    || orthonormality_drift(&self.r_sh) > ROTATION_DRIFT_TOL
                {
                    self.r_sh = polar_rotation(&self.r_sh)?;
                    self.steps_since_projection = 0;
                }
            }
        }
        Ok(())
    }

    /// The deformed kernel at `center`.
    ///
    /// Scale and rotation are left bit-identical while the covariance is
    /// still the rest covariance, and likewise the SH rotation while it is
    /// still the identity.
    pub fn export(&self, rest: &GaussianKernel, center: Vec3) -> GaussianKernel {
        let mut out = rest.clone();
        out.center = center;
        if self.r_sh != Mat3::identity() {
            let r = UnitQuaternion::from_quaternion(quaternion_from_rotation(&self.r_sh));
            out.sh_rotation = (r * UnitQuaternion::from_quaternion(rest.sh_rotation)).into_inner();
        }
        if self.a != self.a0 {
            let reference = UnitQuaternion::from_quaternion(quaternion_from_rotation(&self.r_sh))
                * UnitQuaternion::from_quaternion(rest.rotation);
            let (scale, rotation) = factors_from_covariance(&self.a, &reference.into_inner());
            out.scale = scale;
            out.rotation = rotation;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{axis_angle, skew, sym_eigen_sorted};

    #[test]
    fn total_examples() {
        let a0 = Mat3::from_diagonal(&Vec3::new(1.0, 4.0, 9.0));
        assert_eq!(deform_covariance_total(&a0, &Mat3::identity()).unwrap(), a0);

        let r = axis_angle(&Vec3::new(1.0, 2.0, 3.0), 0.7);
        let (eig, _) = sym_eigen_sorted(&deform_covariance_total(&a0, &r).unwrap());
        assert!((eig - Vec3::new(9.0, 4.0, 1.0)).norm() < 1e-12);

        let f = Mat3::from_diagonal(&Vec3::new(2.0, 1.0, 1.0));
        let out = deform_covariance_total(&Mat3::identity(), &f).unwrap();
        assert_eq!(out, Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0)));

        let flipped = Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0));
        assert!(matches!(
            deform_covariance_total(&a0, &flipped),
            Err(SimError::DegenerateDeformation { .. })
        ));
    }

    #[test]
    fn incremental_examples() {
        let a = Mat3::new(2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5);
        assert_eq!(deform_covariance_incremental(&a, &Mat3::zeros(), 0.1).unwrap(), a);

        let w = skew(&Vec3::new(0.3, -1.0, 2.0));
        let out = deform_covariance_incremental(&Mat3::identity(), &w, 0.01).unwrap();
        assert!((out - Mat3::identity()).norm() < 1e-15);

        let crush = Mat3::identity() * -100.0;
        assert!(matches!(
            deform_covariance_incremental(&a, &crush, 0.1),
            Err(SimError::Timestep(_))
        ));
    }

    #[test]
    fn sh_rotation_examples() {
        let r = axis_angle(&Vec3::new(0.0, 1.0, 1.0), 0.4);
        assert_eq!(update_sh_rotation(&r, &Mat3::zeros(), 0.1).unwrap(), r);

        let stretch = Mat3::new(1.0, 0.2, 0.0, 0.2, -0.5, 0.1, 0.0, 0.1, 0.3);
        let out = update_sh_rotation(&Mat3::identity(), &stretch, 0.05).unwrap();
        assert!((out - Mat3::identity()).norm() < 1e-10);
    }

    #[test]
    fn view_direction_examples() {
        let d = Vec3::new(0.0, 0.6, 0.8);
        assert_eq!(rotate_view_direction(&d, &Mat3::identity()), d);

        // 90° about z: R = [[0,-1,0],[1,0,0],[0,0,1]]; Rᵀ x̂ = −ŷ
        let r = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let out = rotate_view_direction(&Vec3::x(), &r);
        assert!((out - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn full_turn_returns_to_identity() {
        let omega = Vec3::new(0.0, 0.0, 2.0);
        let w = skew(&omega);
        let period = 2.0 * std::f64::consts::PI / omega.norm();
        let mut errors = Vec::new();
        for steps in [1000u64, 2000, 4000] {
            let dt = period / steps as f64;
            let mut r = Mat3::identity();
            for _ in 0..steps {
                r = update_sh_rotation(&r, &w, dt).unwrap();
            }
            errors.push((r - Mat3::identity()).norm());
        }
        assert!(errors[0] < 0.05);
        // O(dt) drift
        assert!(errors[1] < 0.6 * errors[0] && errors[2] < 0.6 * errors[1], "{errors:?}");
    }

    #[test]
    fn export_is_verbatim_at_rest() {
        let rest = GaussianKernel::new(
            Vec3::new(0.1, 0.2, 0.3),
            Vec3::new(0.3, 0.2, 0.1),
            nalgebra::Quaternion::new(0.9, 0.1, -0.3, 0.2).normalize(),
            0.7,
            vec![[0.1, 0.2, 0.3]],
        );
        let mut state = KernelKinematicState::from_kernel(&rest, KinematicsMode::TotalF);
        state.advance(&Mat3::zeros(), 0.01).unwrap();
        assert_eq!(state.export(&rest, rest.center), rest);
    }

    #[test]
    fn export_follows_rigid_rotation() {
        let rest = GaussianKernel::new(
            Vec3::zeros(),
            Vec3::new(0.3, 0.2, 0.1),
            nalgebra::Quaternion::new(0.9, 0.1, -0.3, 0.2).normalize(),
            0.7,
            vec![[0.0; 3]; 4],
        );
        // increments that are exact rotations
        let dt = 1e-3;
        let grad_v = (axis_angle(&Vec3::new(0.5, 1.0, -0.2), 0.01) - Mat3::identity()) / dt;
        let mut state = KernelKinematicState::from_kernel(&rest, KinematicsMode::TotalF);
        for _ in 0..100 {
            state.advance(&grad_v, dt).unwrap();
        }
        let out = state.export(&rest, Vec3::zeros());
        assert!((out.covariance() - state.a).norm() < 1e-12);
        let r = state.r_sh;
        assert!((out.rotation_matrix() - r * rest.rotation_matrix()).norm() < 1e-9);
        assert!((out.sh_rotation_matrix() - r).norm() < 1e-12);
    }

    #[test]
    fn incremental_reprojects_rotation() {
        let w = skew(&Vec3::new(0.0, 3.0, 1.0));
        let mut state = KernelKinematicState::new(Mat3::identity(), KinematicsMode::Incremental);
        for _ in 0..500 {
            state.advance(&w, 1e-3).unwrap();
            assert!(orthonormality_drift(&state.r_sh) <= 1e-8);
            assert!((state.a - state.a.transpose()).norm() <= 1e-12);
        }
    }
}
