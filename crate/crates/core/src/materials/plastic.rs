//! Plastic return maps in principal (singular-value) space.
//!
//! Each map factors `F = U Σ Vᵀ`, projects the principal stretches and
//! reassembles `F_E = U Z(Σ) Vᵀ`. Elastic trial states are returned bit-for-bit
//! unchanged.

use super::decomp::svd3;
use super::MaterialParams;
use crate::error::{Result, SimError};
use crate::math::{dev3, Mat3, Vec3};

const SPATIAL_DIM: f64 = 3.0;

fn principal_log_strain(f: &Mat3) -> Result<(Mat3, Vec3, Mat3)> {
    let det = f.determinant();
    let s = svd3(f);
    if !(det > 0.0) || s.sigma.iter().any(|&x| !(x > 0.0)) {
        return Err(SimError::DegenerateDeformation {
            det,
            particle: None,
        });
    }
    Ok((s.u, s.sigma.map(f64::ln), s.v))
}

fn assemble(u: &Mat3, eps: &Vec3, v: &Mat3) -> Mat3 {
    u * Mat3::from_diagonal(&eps.map(f64::exp)) * v.transpose()
}

/// `α = √(2/3) · 2 sin φ / (3 − sin φ)`.
pub fn drucker_prager_alpha(friction_angle: f64) -> f64 {
    let s = friction_angle.sin();
    (2.0f64 / 3.0).sqrt() * 2.0 * s / (3.0 - s)
}

fn dp_delta_gamma(eps: &Vec3, p: &MaterialParams) -> f64 {
    let alpha = drucker_prager_alpha(p.friction_angle);
    dev3(eps).norm() + alpha * (SPATIAL_DIM * p.lambda + 2.0 * p.mu) * eps.sum() / (2.0 * p.mu)
}

/// Drucker-Prager yield measure δγ of an elastic state; ≤ 0 inside the cone.
pub fn drucker_prager_delta_gamma(f: &Mat3, p: &MaterialParams) -> Result<f64> {
    let (_, eps, _) = principal_log_strain(f)?;
    Ok(dp_delta_gamma(&eps, p))
}

/// Sand plasticity. Expansion (`tr ε > 0`) resets the stretches to 1; states
/// inside the cone are kept; everything else is projected along the
/// deviatoric direction onto the cone.
pub fn return_map_drucker_prager(f_trial: &Mat3, p: &MaterialParams) -> Result<Mat3> {
    let (u, eps, v) = principal_log_strain(f_trial)?;
    let trace = eps.sum();
    if trace > 0.0 {
        return Ok(u * v.transpose());
    }
    let delta_gamma = dp_delta_gamma(&eps, p);
    if delta_gamma <= 0.0 {
        return Ok(*f_trial);
    }
    let eps_dev = dev3(&eps);
    let dev_norm = eps_dev.norm();
    if dev_norm == 0.0 {
        return Ok(*f_trial);
    }
    let projected = eps - eps_dev * (delta_gamma / dev_norm);
    Ok(assemble(&u, &projected, &v))
}

/// `δγ = ‖dev ε‖ − τ_Y / (2μ)`.
pub fn von_mises_delta_gamma(f: &Mat3, p: &MaterialParams) -> Result<f64> {
    let (_, eps, _) = principal_log_strain(f)?;
    Ok(dev3(&eps).norm() - p.yield_stress / (2.0 * p.mu))
}

/// Metal plasticity: radial return of the deviatoric Hencky strain onto the
/// sphere of radius `τ_Y / (2μ)`; the volumetric strain is untouched.
pub fn return_map_von_mises(f_trial: &Mat3, p: &MaterialParams) -> Result<Mat3> {
    let (u, eps, v) = principal_log_strain(f_trial)?;
    let eps_dev = dev3(&eps);
    let dev_norm = eps_dev.norm();
    let delta_gamma = dev_norm - p.yield_stress / (2.0 * p.mu);
    if delta_gamma <= 0.0 || dev_norm == 0.0 {
        return Ok(*f_trial);
    }
    let projected = eps - eps_dev * (delta_gamma / dev_norm);
    Ok(assemble(&u, &projected, &v))
}

/// Yield function `Φ = ‖s‖ − √(2/3) σ_Y` of the deviatoric Kirchhoff stress of `F`.
pub fn herschel_bulkley_yield(f: &Mat3, p: &MaterialParams) -> Result<f64> {
    let (_, eps, _) = principal_log_strain(f)?;
    let b_bar = unimodular_b(&eps);
    Ok((dev3(&b_bar) * p.mu).norm() - (2.0f64 / 3.0).sqrt() * p.yield_stress)
}

/// Principal values of `det(b)^{-1/3} b` for `b = F Fᵀ`, from log stretches.
fn unimodular_b(eps: &Vec3) -> Vec3 {
    let mean = eps.sum() / 3.0;
    eps.map(|e| (2.0 * (e - mean)).exp())
}

/// Viscoplastic (h = 1) update: returns the projected `F_E` and its Kirchhoff stress.
///
/// The deviatoric stress magnitude relaxes toward the yield surface at a rate
/// set by `η / (2μ Δt)`. The new unimodular left stretch keeps the trial
/// principal directions, its deviatoric part equals `s / μ`, and its isotropic
/// part is chosen so that its determinant stays exactly 1. `J` and the trial
/// rotation are preserved.
pub fn herschel_bulkley_step(f_trial: &Mat3, p: &MaterialParams, dt: f64) -> Result<(Mat3, Mat3)> {
    if !(dt > 0.0) {
        return Err(SimError::Parameter(format!("dt must be positive, got {dt}")));
    }
    let (u, eps, v) = principal_log_strain(f_trial)?;
    let j = eps.sum().exp();
    let pressure = 0.5 * p.kappa * (j * j - 1.0);
    let b_bar = unimodular_b(&eps);
    let s_trial = dev3(&b_bar) * p.mu;
    let s_trial_norm = s_trial.norm();
    let yield_radius = (2.0f64 / 3.0).sqrt() * p.yield_stress;

    if s_trial_norm - yield_radius <= 0.0 || s_trial_norm == 0.0 {
        let tau = u * Mat3::from_diagonal(&(s_trial.add_scalar(pressure))) * u.transpose();
        return Ok((*f_trial, tau));
    }

    let s_norm =
        s_trial_norm - (s_trial_norm - yield_radius) / (1.0 + p.viscosity / (2.0 * p.mu * dt));
    let s = s_trial * (s_norm / s_trial_norm);
    let deviatoric = s / p.mu;
    let shift = unit_determinant_shift(&deviatoric);
    let b_bar_new = deviatoric.add_scalar(shift);

    let stretch = b_bar_new.map(|b| j.cbrt() * b.sqrt());
    let f_elastic = u * Mat3::from_diagonal(&stretch) * v.transpose();
    let tau = u * Mat3::from_diagonal(&s.add_scalar(pressure)) * u.transpose();
    Ok((f_elastic, tau))
}

/// Solve `Π (c + d_i) = 1` for `c > −min d_i`.
///
/// The product is increasing and convex on that interval, so Newton started
/// to the right of the root converges monotonically.
fn unit_determinant_shift(d: &Vec3) -> f64 {
    let d_min = d.min();
    let mut c = 1.0 - d_min;
    for _ in 0..100 {
        let a = d.add_scalar(c);
        let f = a.x * a.y * a.z - 1.0;
        let df = a.y * a.z + a.x * a.z + a.x * a.y;
        let step = f / df;
        c -= step;
        if step.abs() <= 4.0 * f64::EPSILON * c.abs().max(1.0) {
            break;
        }
    }
    c
}
