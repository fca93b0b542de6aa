//! Gaussian splat clouds: the shared particle/rendering representation.
//!
//! Kernels are stored in linear space (scales as standard deviations,
//! opacity in `[0, 1]`); the PLY reader and writer convert from and to the
//! log/logit encoding used on disk.

mod ply;

pub use ply::{load_gaussian_ply, read_gaussian_ply, save_gaussian_ply, write_gaussian_ply, PlyFormat};

use nalgebra::{Quaternion, Rotation3, UnitQuaternion};

use crate::error::{Result, SimError};
use crate::math::{sym_eigen_sorted, Mat3, Vec3};

/// Tolerance on `‖q‖ − 1` below which a loaded quaternion is kept verbatim.
pub const QUATERNION_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub center: Vec3,
    /// Per-axis standard deviations.
    pub scale: Vec3,
    /// `(w, x, y, z)`; unit norm within [`QUATERNION_NORM_TOL`].
    pub rotation: Quaternion<f64>,
    pub opacity: f64,
    /// RGB coefficients per SH basis function, `(L + 1)²` entries.
    pub sh: Vec<[f64; 3]>,
    /// Accumulated rotation applied to view directions before SH evaluation.
    pub sh_rotation: Quaternion<f64>,
}

impl GaussianKernel {
    pub fn new(center: Vec3, scale: Vec3, rotation: Quaternion<f64>, opacity: f64, sh: Vec<[f64; 3]>) -> Self {
        Self {
            center,
            scale,
            rotation,
            opacity,
            sh,
            sh_rotation: Quaternion::identity(),
        }
    }

    /// An isotropic kernel with a single DC color.
    pub fn isotropic(center: Vec3, radius: f64, opacity: f64, dc: [f64; 3]) -> Self {
        Self::new(center, Vec3::repeat(radius), Quaternion::identity(), opacity, vec![dc])
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        *UnitQuaternion::from_quaternion(self.rotation)
            .to_rotation_matrix()
            .matrix()
    }

    pub fn sh_rotation_matrix(&self) -> Mat3 {
        *UnitQuaternion::from_quaternion(self.sh_rotation)
            .to_rotation_matrix()
            .matrix()
    }

    pub fn covariance(&self) -> Mat3 {
        covariance_from_factors(self)
    }

    pub fn sh_degree(&self) -> Option<usize> {
        sh_degree_for_len(self.sh.len())
    }

    pub fn axis_ratio(&self) -> f64 {
        self.scale.max() / self.scale.min()
    }
}

pub fn sh_degree_for_len(len: usize) -> Option<usize> {
    match len {
        1 => Some(0),
        4 => Some(1),
        9 => Some(2),
        16 => Some(3),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianCloud {
    pub kernels: Vec<GaussianKernel>,
    pub sh_degree: usize,
}

impl GaussianCloud {
    pub fn new(kernels: Vec<GaussianKernel>, sh_degree: usize) -> Result<Self> {
        let cloud = Self { kernels, sh_degree };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > 3 {
            return Err(SimError::Parameter(format!(
                "SH degree {} exceeds 3",
                self.sh_degree
            )));
        }
        let expected = (self.sh_degree + 1).pow(2);
        for (i, k) in self.kernels.iter().enumerate() {
            if k.sh.len() != expected {
                return Err(SimError::Parameter(format!(
                    "kernel {i} has {} SH coefficients, expected {expected}",
                    k.sh.len()
                )));
            }
            if !k.scale.iter().all(|&s| s > 0.0 && s.is_finite()) {
                return Err(SimError::Parameter(format!("kernel {i} has a non-positive scale")));
            }
            if !(0.0..=1.0).contains(&k.opacity) {
                return Err(SimError::Parameter(format!(
                    "kernel {i} opacity {} outside [0, 1]",
                    k.opacity
                )));
            }
            if (k.rotation.norm() - 1.0).abs() > QUATERNION_NORM_TOL {
                return Err(SimError::Parameter(format!("kernel {i} rotation is not unit length")));
            }
        }
        Ok(())
    }

    /// Keep at most degree `degree` SH bands.
    pub fn truncate_sh(&mut self, degree: usize) {
        if degree >= self.sh_degree {
            return;
        }
        let len = (degree + 1).pow(2);
        for k in &mut self.kernels {
            k.sh.truncate(len);
        }
        self.sh_degree = degree;
    }
}

/// World covariance `R diag(s²) Rᵀ`.
pub fn covariance_from_factors(kernel: &GaussianKernel) -> Mat3 {
    let r = kernel.rotation_matrix();
    let s2 = kernel.scale.component_mul(&kernel.scale);
    r * Mat3::from_diagonal(&s2) * r.transpose()
}

/// Mean over kernels of `max(max(s)/min(s), r) − r`.
pub fn anisotropy_metric(cloud: &GaussianCloud, r: f64) -> f64 {
    debug_assert!(r >= 1.0, "anisotropy bound must be at least 1");
    if cloud.is_empty() {
        return 0.0;
    }
    let total: f64 = cloud
        .kernels
        .iter()
        .map(|k| {
            let min = k.scale.min();
            ((k.scale.max() - r * min) / min).max(0.0)
        })
        .sum();
    total / cloud.len() as f64
}

/// Shrink every axis longer than `r` times the shortest one down to that bound.
pub fn clamp_anisotropy(cloud: &GaussianCloud, r: f64) -> GaussianCloud {
    debug_assert!(r >= 1.0, "anisotropy bound must be at least 1");
    let mut out = cloud.clone();
    for k in &mut out.kernels {
        let bound = r * k.scale.min();
        k.scale = k.scale.map(|s| s.min(bound));
    }
    out
}

/// Factor an SPD covariance as `R diag(s²) Rᵀ`, choosing the axis order and
/// signs of `R` closest to `reference` (a quaternion, not necessarily unit).
///
/// Covariances that are already diagonal in the reference frame (relative
/// off-diagonal below 1e-12) keep the reference quaternion verbatim.
pub fn factors_from_covariance(cov: &Mat3, reference: &Quaternion<f64>) -> (Vec3, Quaternion<f64>) {
    let r_ref = *UnitQuaternion::from_quaternion(*reference)
        .to_rotation_matrix()
        .matrix();
    let local = r_ref.transpose() * cov * r_ref;
    let off = local[(0, 1)].abs().max(local[(0, 2)].abs()).max(local[(1, 2)].abs());
    if off <= 1e-12 * local.trace().abs() {
        let scale = local.diagonal().map(|v| v.max(0.0).sqrt());
        return (scale, *reference);
    }

    let (values, vectors) = sym_eigen_sorted(&crate::math::symmetrize(&local));
    let perm = best_axis_permutation(&vectors);
    let mut q = Mat3::zeros();
    let mut scale = Vec3::zeros();
    for axis in 0..3 {
        let col = perm[axis];
        let mut v = vectors.column(col).into_owned();
        if v[axis] < 0.0 {
            v = -v;
        }
        q.set_column(axis, &v);
        scale[axis] = values[col].max(0.0).sqrt();
    }
    if q.determinant() < 0.0 {
        // flip the least aligned axis
        let weakest = (0..3)
            .min_by(|&a, &b| q[(a, a)].abs().total_cmp(&q[(b, b)].abs()))
            .unwrap_or(2);
        q.column_mut(weakest).neg_mut();
    }
    let local_rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(q));
    (scale, reference * local_rot.into_inner())
}

/// Column permutation of `m` that maximizes `Σ |m[axis, perm[axis]]|`.
fn best_axis_permutation(m: &Mat3) -> [usize; 3] {
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let score = |p: &[usize; 3]| (0..3).map(|a| m[(a, p[a])].abs()).sum::<f64>();
    let mut best = PERMS[0];
    let mut best_score = score(&best);
    for p in &PERMS[1..] {
        let s = score(p);
        if s > best_score {
            best = *p;
            best_score = s;
        }
    }
    best
}
