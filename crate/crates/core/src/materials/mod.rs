//! Constitutive models: hyperelastic Kirchhoff stresses and plastic return maps.
//!
//! Every function here is pure and works on a single deformation gradient, so
//! the MPM engine can evaluate them in parallel per particle.

mod decomp;
mod elastic;
mod plastic;

pub use decomp::{polar_rotation, svd3, Svd3};
pub use elastic::{
    energy_fixed_corotated, energy_herschel_bulkley, energy_neo_hookean, energy_stvk,
    kirchhoff_fixed_corotated, kirchhoff_herschel_bulkley, kirchhoff_neo_hookean, kirchhoff_stvk,
    NeoHookeanMode,
};
pub use plastic::{
    drucker_prager_alpha, drucker_prager_delta_gamma, herschel_bulkley_step,
    herschel_bulkley_yield, return_map_drucker_prager, return_map_von_mises,
    von_mises_delta_gamma,
};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::math::Mat3;

/// `(mu, lambda, kappa)` from Young's modulus and Poisson ratio.
pub fn derive_moduli(e: f64, nu: f64) -> Result<(f64, f64, f64)> {
    if !(e > 0.0) || !e.is_finite() {
        return Err(SimError::Parameter(format!(
            "Young's modulus must be positive, got {e}"
        )));
    }
    if !(0.0..0.5).contains(&nu) {
        return Err(SimError::Parameter(format!(
            "Poisson ratio must lie in [0, 0.5), got {nu}"
        )));
    }
    let mu = e / (2.0 * (1.0 + nu));
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let kappa = e / (3.0 * (1.0 - 2.0 * nu));
    Ok((mu, lambda, kappa))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub mu: f64,
    pub lambda: f64,
    pub kappa: f64,
    /// kg/m³
    pub density: f64,
    /// Drucker-Prager friction angle, radians.
    pub friction_angle: f64,
    /// Von Mises τ_Y or Herschel-Bulkley σ_Y, Pa.
    pub yield_stress: f64,
    /// Herschel-Bulkley viscosity η, Pa·s.
    pub viscosity: f64,
}

impl MaterialParams {
    pub fn new(youngs_modulus: f64, poisson_ratio: f64, density: f64) -> Result<Self> {
        let (mu, lambda, kappa) = derive_moduli(youngs_modulus, poisson_ratio)?;
        if !(density > 0.0) || !density.is_finite() {
            return Err(SimError::Parameter(format!(
                "density must be positive, got {density}"
            )));
        }
        Ok(Self {
            youngs_modulus,
            poisson_ratio,
            mu,
            lambda,
            kappa,
            density,
            friction_angle: 0.0,
            yield_stress: 0.0,
            viscosity: 0.0,
        })
    }

    pub fn with_friction_angle(mut self, radians: f64) -> Self {
        self.friction_angle = radians;
        self
    }

    pub fn with_yield_stress(mut self, stress: f64) -> Self {
        self.yield_stress = stress;
        self
    }

    pub fn with_viscosity(mut self, viscosity: f64) -> Self {
        self.viscosity = viscosity;
        self
    }

    pub fn validate(&self) -> Result<()> {
        derive_moduli(self.youngs_modulus, self.poisson_ratio)?;
        for (name, value) in [
            ("friction_angle", self.friction_angle),
            ("yield_stress", self.yield_stress),
            ("viscosity", self.viscosity),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(SimError::Parameter(format!(
                    "{name} must be finite and nonnegative, got {value}"
                )));
            }
        }
        if !(self.density > 0.0) {
            return Err(SimError::Parameter("density must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Elasticity {
    FixedCorotated,
    StVK,
    NeoHookean,
    HerschelBulkleyElastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Plasticity {
    None,
    DruckerPrager,
    VonMises,
    HerschelBulkley,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaterialModel {
    pub elasticity: Elasticity,
    pub plasticity: Plasticity,
}

impl MaterialModel {
    pub fn new(elasticity: Elasticity, plasticity: Plasticity) -> Result<Self> {
        let model = Self {
            elasticity,
            plasticity,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.plasticity, self.elasticity) {
            (Plasticity::HerschelBulkley, e) if e != Elasticity::HerschelBulkleyElastic => Err(
                SimError::Parameter("Herschel-Bulkley plasticity requires its own elastic stress".into()),
            ),
            (Plasticity::DruckerPrager, e) if e != Elasticity::StVK => Err(SimError::Parameter(
                "Drucker-Prager plasticity pairs with the StVK (Hencky) stress".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Look up a model by its conventional name ("Fixed corotated",
    /// "von Mises", "Drucker-Prager", "Herschel-Bulkley", "Neo-Hookean", "StVK").
    /// Matching ignores case, spaces, hyphens and underscores.
    pub fn from_name(name: &str) -> Option<Self> {
        let key: String = name
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        let (elasticity, plasticity) = match key.as_str() {
            "fixedcorotated" => (Elasticity::FixedCorotated, Plasticity::None),
            "stvk" => (Elasticity::StVK, Plasticity::None),
            "neohookean" => (Elasticity::NeoHookean, Plasticity::None),
            "vonmises" => (Elasticity::StVK, Plasticity::VonMises),
            "druckerprager" => (Elasticity::StVK, Plasticity::DruckerPrager),
            "herschelbulkley" => (Elasticity::HerschelBulkleyElastic, Plasticity::HerschelBulkley),
            _ => return None,
        };
        Some(Self {
            elasticity,
            plasticity,
        })
    }

    pub fn is_plastic(&self) -> bool {
        self.plasticity != Plasticity::None
    }
}

/// A fully specified material: model, parameters and model switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub model: MaterialModel,
    pub params: MaterialParams,
    #[serde(default)]
    pub neo_hookean_mode: NeoHookeanMode,
}

impl Material {
    pub fn new(model: MaterialModel, params: MaterialParams) -> Result<Self> {
        model.validate()?;
        params.validate()?;
        Ok(Self {
            model,
            params,
            neo_hookean_mode: NeoHookeanMode::default(),
        })
    }

    pub fn elastic(e: f64, nu: f64, density: f64) -> Result<Self> {
        Self::new(
            MaterialModel::new(Elasticity::FixedCorotated, Plasticity::None)?,
            MaterialParams::new(e, nu, density)?,
        )
    }

    /// Kirchhoff stress of an elastic deformation gradient.
    pub fn kirchhoff(&self, f_elastic: &Mat3) -> Result<Mat3> {
        let p = &self.params;
        match self.model.elasticity {
            Elasticity::FixedCorotated => kirchhoff_fixed_corotated(f_elastic, p),
            Elasticity::StVK => kirchhoff_stvk(f_elastic, p),
            Elasticity::NeoHookean => kirchhoff_neo_hookean(f_elastic, p, self.neo_hookean_mode),
            Elasticity::HerschelBulkleyElastic => kirchhoff_herschel_bulkley(f_elastic, p),
        }
    }

    /// Elastic energy density Ψ(F_E).
    pub fn energy_density(&self, f_elastic: &Mat3) -> Result<f64> {
        let p = &self.params;
        match self.model.elasticity {
            Elasticity::FixedCorotated => energy_fixed_corotated(f_elastic, p),
            Elasticity::StVK => energy_stvk(f_elastic, p),
            Elasticity::NeoHookean => energy_neo_hookean(f_elastic, p),
            Elasticity::HerschelBulkleyElastic => energy_herschel_bulkley(f_elastic, p),
        }
    }

    /// Project a trial elastic deformation gradient back onto the admissible set.
    pub fn return_map(&self, f_trial: &Mat3, dt: f64) -> Result<Mat3> {
        let p = &self.params;
        match self.model.plasticity {
            Plasticity::None => Ok(*f_trial),
            Plasticity::DruckerPrager => return_map_drucker_prager(f_trial, p),
            Plasticity::VonMises => return_map_von_mises(f_trial, p),
            Plasticity::HerschelBulkley => herschel_bulkley_step(f_trial, p, dt).map(|(f, _)| f),
        }
    }
}
