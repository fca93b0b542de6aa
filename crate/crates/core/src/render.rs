//! A small deterministic splat rasterizer.
//!
//! Kernels are projected with the local affine (EWA) approximation of the
//! pinhole map, sorted once per image by depth and composited front to back
//! per pixel. Pixel `(u, v)` is sampled at its integer coordinates. Colors
//! come from the kernel SH evaluated at the view direction rotated back by
//! the kernel's accumulated SH rotation.
//!
//! Conventions: cameras follow the OpenCV frame (+z forward, +y down),
//! opacities are clamped to 0.99, and 0.3 px² is added to every projected
//! covariance as a low-pass filter.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{Matrix2, Matrix2x3, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::gs_io::{GaussianCloud, GaussianKernel};
use crate::kinematics::rotate_view_direction;
use crate::math::{Mat3, Vec3};

pub const ALPHA_MAX: f64 = 0.99;
pub const LOW_PASS: f64 = 0.3;
/// Splats are culled when their 3σ footprint misses the image.
pub const CULL_SIGMA: f64 = 3.0;
/// Per-pixel evaluation stops at this squared Mahalanobis distance (weight < 1e-10).
const EVAL_RADIUS2: f64 = 46.0;

const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Pinhole camera with a world-to-camera rigid transform `x_c = R x_w + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

impl Camera {
    pub fn new(rotation: Mat3, translation: Vec3, fx: f64, fy: f64, width: usize, height: usize) -> Self {
        Self {
            rotation,
            translation,
            fx,
            fy,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
            near: 0.01,
        }
    }

    /// Camera at `eye` looking at `target`, with `up` pointing up in the image.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fx: f64, fy: f64, width: usize, height: usize) -> Result<Self> {
        let forward = target - eye;
        let right = forward.cross(&up);
        if forward.norm() == 0.0 || right.norm() < 1e-12 * forward.norm() * up.norm() {
            return Err(SimError::Parameter("look_at needs distinct eye/target and a non-parallel up".into()));
        }
        let z = forward.normalize();
        let x = right.normalize();
        let y = z.cross(&x);
        let rotation = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Ok(Self::new(rotation, -(rotation * eye), fx, fy, width, height))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SimError::Parameter("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SimError::Parameter("image must have positive size".into()));
        }
        if (self.rotation.transpose() * self.rotation - Mat3::identity()).norm() > 1e-6
            || self.rotation.determinant() <= 0.0
        {
            return Err(SimError::Parameter("camera rotation must be a proper rotation".into()));
        }
        if !(self.near > 0.0) {
            return Err(SimError::Parameter("near plane must be positive".into()));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub depth: f64,
    pub color: Vec3,
    pub opacity: f64,
}

/// Evaluate SH coefficients at view direction `d` after undoing `r_sh`,
/// add the 0.5 offset and clamp at zero.
pub fn sh_eval(coeffs: &[[f64; 3]], d: &Vec3, r_sh: &Mat3) -> Vec3 {
    let dir = rotate_view_direction(d, r_sh);
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut basis = [0.0f64; 16];
    basis[0] = SH_C0;
    if coeffs.len() >= 4 {
        basis[1] = -SH_C1 * y;
        basis[2] = SH_C1 * z;
        basis[3] = -SH_C1 * x;
    }
    if coeffs.len() >= 9 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        basis[4] = SH_C2[0] * x * y;
        basis[5] = SH_C2[1] * y * z;
        basis[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        basis[7] = SH_C2[3] * x * z;
        basis[8] = SH_C2[4] * (xx - yy);
        if coeffs.len() >= 16 {
            basis[9] = SH_C3[0] * y * (3.0 * xx - yy);
            basis[10] = SH_C3[1] * x * y * z;
            basis[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            basis[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            basis[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            basis[14] = SH_C3[5] * z * (xx - yy);
            basis[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
    let mut rgb = Vec3::repeat(0.5);
    for (c, b) in coeffs.iter().zip(basis) {
        rgb += Vec3::from(*c) * b;
    }
    rgb.map(|v| v.max(0.0))
}

/// Project one kernel; `None` when it is behind the near plane or off screen.
pub fn project_gaussian(kernel: &GaussianKernel, camera: &Camera) -> Option<Splat2D> {
    let p = camera.rotation * kernel.center + camera.translation;
    if p.z <= camera.near {
        return None;
    }
    let inv_z = 1.0 / p.z;
    let mean = Vector2::new(camera.fx * p.x * inv_z + camera.cx, camera.fy * p.y * inv_z + camera.cy);
    let j = Matrix2x3::new(
        camera.fx * inv_z,
        0.0,
        -camera.fx * p.x * inv_z * inv_z,
        0.0,
        camera.fy * inv_z,
        -camera.fy * p.y * inv_z * inv_z,
    );
    let t = j * camera.rotation;
    let mut cov = t * kernel.covariance() * t.transpose();
    cov = (cov + cov.transpose()) * 0.5 + Matrix2::identity() * LOW_PASS;

    let reach = CULL_SIGMA * max_eigen(&cov).sqrt();
    if mean.x + reach < 0.0
        || mean.x - reach > (camera.width - 1) as f64
        || mean.y + reach < 0.0
        || mean.y - reach > (camera.height - 1) as f64
    {
        return None;
    }

    let dir = (kernel.center - camera.position()).normalize();
    let color = sh_eval(&kernel.sh, &dir, &kernel.sh_rotation_matrix());
    Some(Splat2D {
        mean,
        cov,
        depth: p.z,
        color,
        opacity: kernel.opacity,
    })
}

fn max_eigen(m: &Matrix2<f64>) -> f64 {
    let half_tr = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    half_tr + (half_tr * half_tr - det).max(0.0).sqrt()
}

/// Row-major linear RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Vec3>,
}

impl Image {
    pub fn black(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![Vec3::zeros(); width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> Vec3 {
        self.pixels[v * self.width + u]
    }

    /// 8-bit RGB bytes, `round(clamp(c, 0, 1) · 255)`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| p.iter().map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8).collect::<Vec<_>>())
            .collect()
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_rgb8());
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| SimError::io(path, e))?;
        f.write_all(&self.to_ppm()).map_err(|e| SimError::io(path, e))
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        image::save_buffer(
            path,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| match e {
            image::ImageError::IoError(io) => SimError::io(path, io),
            other => SimError::io(path, std::io::Error::other(other.to_string())),
        })
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }
}

/// Project, depth sort and composite every kernel of `cloud`.
pub fn render(cloud: &GaussianCloud, camera: &Camera) -> Image {
    let mut splats: Vec<(usize, Splat2D)> = cloud
        .kernels
        .par_iter()
        .enumerate()
        .filter_map(|(i, k)| project_gaussian(k, camera).map(|s| (i, s)))
        .collect();
    splats.sort_by(|a, b| a.1.depth.total_cmp(&b.1.depth).then(a.0.cmp(&b.0)));

    struct Prepared {
        mean: Vector2<f64>,
        inv: Matrix2<f64>,
        reach: f64,
        color: Vec3,
        opacity: f64,
    }
    let prepared: Vec<Prepared> = splats
        .into_iter()
        .filter_map(|(_, s)| {
            let inv = s.cov.try_inverse()?;
            Some(Prepared {
                mean: s.mean,
                inv,
                reach: (EVAL_RADIUS2 * max_eigen(&s.cov)).sqrt(),
                color: s.color,
                opacity: s.opacity,
            })
        })
        .collect();

    let mut img = Image::black(camera.width, camera.height);
    img.pixels.par_chunks_mut(camera.width).enumerate().for_each(|(v, row)| {
        let py = v as f64;
        for (u, out) in row.iter_mut().enumerate() {
            let px = u as f64;
            let mut color = Vec3::zeros();
            let mut transmittance = 1.0;
            for s in &prepared {
                if (px - s.mean.x).abs() > s.reach || (py - s.mean.y).abs() > s.reach {
                    continue;
                }
                let d = Vector2::new(px - s.mean.x, py - s.mean.y);
                let q = d.dot(&(s.inv * d));
                if q > EVAL_RADIUS2 {
                    continue;
                }
                let alpha = (s.opacity * (-0.5 * q).exp()).clamp(0.0, ALPHA_MAX);
                color += s.color * (alpha * transmittance);
                transmittance *= 1.0 - alpha;
            }
            *out = color;
        }
    });
    img
}

/// Camera description used in configs and camera-path files.
///
/// Either `rotation` + `translation` (world to camera) or `eye` + `target`
/// (+ optional `up`, default `[0, 0, 1]`) must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    #[serde(default)]
    pub fy: Option<f64>,
    #[serde(default)]
    pub cx: Option<f64>,
    #[serde(default)]
    pub cy: Option<f64>,
    #[serde(default)]
    pub near: Option<f64>,
    #[serde(default)]
    pub rotation: Option<[[f64; 3]; 3]>,
    #[serde(default)]
    pub translation: Option<[f64; 3]>,
    #[serde(default)]
    pub eye: Option<[f64; 3]>,
    #[serde(default)]
    pub target: Option<[f64; 3]>,
    #[serde(default)]
    pub up: Option<[f64; 3]>,
}

impl CameraSpec {
    pub fn to_camera(&self) -> Result<Camera> {
        let fy = self.fy.unwrap_or(self.fx);
        let mut cam = match (self.rotation, self.translation, self.eye, self.target) {
            (Some(r), Some(t), None, None) => {
                let rotation = Mat3::from_fn(|i, j| r[i][j]);
                Camera::new(rotation, Vec3::from(t), self.fx, fy, self.width, self.height)
            }
            (None, None, Some(eye), Some(target)) => Camera::look_at(
                Vec3::from(eye),
                Vec3::from(target),
                Vec3::from(self.up.unwrap_or([0.0, 0.0, 1.0])),
                self.fx,
                fy,
                self.width,
                self.height,
            )?,
            _ => {
                return Err(SimError::Parameter(
                    "camera needs either rotation+translation or eye+target".into(),
                ))
            }
        };
        if let Some(cx) = self.cx {
            cam.cx = cx;
        }
        if let Some(cy) = self.cy {
            cam.cy = cy;
        }
        if let Some(near) = self.near {
            cam.near = near;
        }
        cam.validate()?;
        Ok(cam)
    }
}

/// One [`CameraSpec`] JSON object per non-empty line.
pub fn read_camera_path(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| SimError::io(path, e))?;
    let mut cams = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| SimError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let spec: CameraSpec = serde_json::from_str(&line).map_err(|e| {
            SimError::config(format!("{}:{}", path.display(), n + 1), e.to_string())
        })?;
        cams.push(spec.to_camera()?);
    }
    Ok(cams)
}
