//! Gaussian-splat physics engine.
//!
//! A cloud of anisotropic 3D Gaussian kernels is used both as the particle
//! discretization of a material point method (MPM) simulation and as the
//! rendering primitive. Kernel covariances follow the local deformation
//! gradient and spherical-harmonic appearance follows the local rotation,
//! so every simulated frame can be written back out as a splat file.
//!
//! Module map:
//!
//! - [`gs_io`]: splat PLY files, covariance factors, anisotropy control
//! - [`materials`]: hyperelastic stresses, plastic return maps, 3×3 decompositions
//! - [`mpm`]: grid, quadratic B-spline transfers and the explicit time loop
//! - [`kinematics`]: covariance and SH-orientation evolution
//! - [`fill`]: opacity-field interior filling
//! - [`render`]: a small deterministic splat rasterizer
//! - [`scene`]: configuration, pipeline orchestration and diagnostics

pub mod error;
pub mod fill;
pub mod geometry;
pub mod gs_io;
pub mod kinematics;
pub mod materials;
pub mod math;
pub mod mpm;
pub mod render;
pub mod scene;

pub use error::{Result, SimError};
pub use gs_io::{GaussianCloud, GaussianKernel};
pub use math::{Mat3, Vec3};
