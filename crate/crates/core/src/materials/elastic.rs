//! Hyperelastic Kirchhoff stresses `τ = (∂Ψ/∂F) Fᵀ` and their energy densities.

use serde::{Deserialize, Serialize};

use super::decomp::svd3;
use super::MaterialParams;
use crate::error::{Result, SimError};
use crate::math::{dev, Mat3, Vec3};

/// Which volumetric term the Neo-Hookean stress uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeoHookeanMode {
    /// `μ(FFᵀ − I) + λ log(J) I`, the stress of the compressible Neo-Hookean energy.
    #[default]
    LambdaConsistent,
    /// `μ(FFᵀ − I) + log(J) I`, with no λ on the volumetric term.
    Literal,
}

fn positive_det(f: &Mat3) -> Result<f64> {
    let det = f.determinant();
    if det > 0.0 && det.is_finite() {
        Ok(det)
    } else {
        Err(SimError::DegenerateDeformation {
            det,
            particle: None,
        })
    }
}

/// Hencky strain `log Σ` together with the SVD factors of `F`.
fn hencky(f: &Mat3) -> Result<(Mat3, Vec3, Mat3)> {
    positive_det(f)?;
    let s = svd3(f);
    if s.sigma.iter().any(|&x| !(x > 0.0)) {
        return Err(SimError::DegenerateDeformation {
            det: f.determinant(),
            particle: None,
        });
    }
    Ok((s.u, s.sigma.map(f64::ln), s.v))
}

/// `τ = 2μ(F − R)Fᵀ + λ(J − 1)J I`.
pub fn kirchhoff_fixed_corotated(f: &Mat3, p: &MaterialParams) -> Result<Mat3> {
    let j = positive_det(f)?;
    let r = svd3(f).rotation();
    let tau = (f - r) * f.transpose() * (2.0 * p.mu) + Mat3::identity() * (p.lambda * (j - 1.0) * j);
    Ok(tau)
}

pub fn energy_fixed_corotated(f: &Mat3, p: &MaterialParams) -> Result<f64> {
    let j = positive_det(f)?;
    let sigma = svd3(f).sigma;
    let shear: f64 = sigma.iter().map(|s| (s - 1.0).powi(2)).sum();
    Ok(p.mu * shear + 0.5 * p.lambda * (j - 1.0).powi(2))
}

/// Hencky-strain StVK: `τ = U (2μ ε + λ tr(ε) 1) Uᵀ` with `ε = log Σ`.
///
/// For a symmetric stretch (`U = V`) this is the same as `U(·)Vᵀ`; using `Uᵀ`
/// on the right keeps τ symmetric and objective for general `F`.
pub fn kirchhoff_stvk(f: &Mat3, p: &MaterialParams) -> Result<Mat3> {
    let (u, eps, _) = hencky(f)?;
    let trace = eps.sum();
    let principal = eps * (2.0 * p.mu) + Vec3::repeat(p.lambda * trace);
    Ok(u * Mat3::from_diagonal(&principal) * u.transpose())
}

pub fn energy_stvk(f: &Mat3, p: &MaterialParams) -> Result<f64> {
    let (_, eps, _) = hencky(f)?;
    Ok(p.mu * eps.norm_squared() + 0.5 * p.lambda * eps.sum().powi(2))
}

pub fn kirchhoff_neo_hookean(f: &Mat3, p: &MaterialParams, mode: NeoHookeanMode) -> Result<Mat3> {
    let j = positive_det(f)?;
    let volumetric = match mode {
        NeoHookeanMode::LambdaConsistent => p.lambda * j.ln(),
        NeoHookeanMode::Literal => j.ln(),
    };
    Ok((f * f.transpose() - Mat3::identity()) * p.mu + Mat3::identity() * volumetric)
}

/// Energy of the λ-consistent Neo-Hookean model.
pub fn energy_neo_hookean(f: &Mat3, p: &MaterialParams) -> Result<f64> {
    let j = positive_det(f)?;
    let log_j = j.ln();
    Ok(0.5 * p.mu * ((f.transpose() * f).trace() - 3.0) - p.mu * log_j
        + 0.5 * p.lambda * log_j * log_j)
}

/// `τ = κ/2 (J² − 1) I + μ dev(det(b)^{-1/3} b)` with `b = F Fᵀ`.
pub fn kirchhoff_herschel_bulkley(f: &Mat3, p: &MaterialParams) -> Result<Mat3> {
    let j = positive_det(f)?;
    let b = f * f.transpose();
    let b_bar = b * j.powf(-2.0 / 3.0);
    Ok(Mat3::identity() * (0.5 * p.kappa * (j * j - 1.0)) + dev(&b_bar) * p.mu)
}

pub fn energy_herschel_bulkley(f: &Mat3, p: &MaterialParams) -> Result<f64> {
    let j = positive_det(f)?;
    let b_bar_trace = (f * f.transpose()).trace() * j.powf(-2.0 / 3.0);
    Ok(0.5 * p.kappa * (0.5 * (j * j - 1.0) - j.ln()) + 0.5 * p.mu * (b_bar_trace - 3.0))
}
