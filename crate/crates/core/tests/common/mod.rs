#![allow(dead_code)]

use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatsim_core::gs_io::{save_gaussian_ply, GaussianCloud, GaussianKernel};
use splatsim_core::{Mat3, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn random_vec(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vec3 {
    Vec3::new(uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi))
}

pub fn random_unit_quaternion(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    let q = Quaternion::new(
        uniform(rng, -1.0, 1.0),
        uniform(rng, -1.0, 1.0),
        uniform(rng, -1.0, 1.0),
        uniform(rng, -1.0, 1.0),
    );
    UnitQuaternion::from_quaternion(q)
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    random_unit_quaternion(rng).to_rotation_matrix().into_inner()
}

/// `U diag(σ) Vᵀ` with random rotations and `σ ∈ [lo, hi]`.
pub fn random_f(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Mat3 {
    let u = random_rotation(rng);
    let v = random_rotation(rng);
    u * Mat3::from_diagonal(&random_vec(rng, lo, hi)) * v.transpose()
}

/// A random kernel with SH of the given degree.
pub fn random_kernel(rng: &mut ChaCha8Rng, degree: usize) -> GaussianKernel {
    let n = (degree + 1) * (degree + 1);
    let sh = (0..n)
        .map(|_| [uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5)])
        .collect();
    GaussianKernel::new(
        random_vec(rng, -1.0, 1.0),
        random_vec(rng, 0.01, 0.2),
        random_unit_quaternion(rng).into_inner(),
        uniform(rng, 0.05, 0.95),
        sh,
    )
}

/// `n³` isotropic kernels filling an axis-aligned cube.
pub fn cube_kernels(center: Vec3, edge: f64, n: usize, opacity: f64) -> Vec<GaussianKernel> {
    let h = edge / n as f64;
    let mut out = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let offset = Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * h;
                let c = center - Vec3::repeat(edge / 2.0) + offset;
                let color = [i as f64 / n as f64, j as f64 / n as f64, k as f64 / n as f64];
                out.push(GaussianKernel::isotropic(c, 0.5 * h, opacity, color));
            }
        }
    }
    out
}

/// Kernels on a sphere at roughly uniform `spacing` (Fibonacci lattice).
pub fn sphere_shell_kernels(center: Vec3, radius: f64, spacing: f64, opacity: f64) -> Vec<GaussianKernel> {
    let n = (4.0 * std::f64::consts::PI * radius * radius / (spacing * spacing)).ceil() as usize;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let dir = Vec3::new(r * phi.cos(), r * phi.sin(), z);
            GaussianKernel::isotropic(center + dir * radius, spacing, opacity, [0.8, 0.3, 0.2])
        })
        .collect()
}

/// Write `kernels` as `<dir>/input.ply` and `body` (with `input = "input.ply"` prepended)
/// as `<dir>/scene.toml`; returns the config path.
pub fn write_scene(dir: &Path, kernels: Vec<GaussianKernel>, body: &str) -> PathBuf {
    let degree = kernels.first().and_then(|k| k.sh_degree()).unwrap_or(0);
    let cloud = GaussianCloud::new(kernels, degree).unwrap();
    save_gaussian_ply(&cloud, dir.join("input.ply")).unwrap();
    let path = dir.join("scene.toml");
    std::fs::write(&path, format!("input = \"input.ply\"\n{body}")).unwrap();
    path
}

pub fn rel_err(a: &Mat3, b: &Mat3) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
