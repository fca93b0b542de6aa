//! Scene configuration and the load → clamp → fill → simulate → export pipeline.
//!
//! The selected simulation region is mapped to the cube `[0, 2]³` by a
//! uniform scale `s = 2 / (largest region extent)` and a shift of the region's
//! minimum corner to the origin. The background grid has `grid_resolution`
//! cells across that cube plus [`BOUNDARY_MARGIN`] padding cells on every
//! side, so the boundary walls sit on the cube faces. Regions, centers and
//! cameras are given in input coordinates; velocities and gravity are in the
//! normalized coordinates of the simulation.
//!
//! Kernels outside the region are passed through unchanged. Kernel
//! covariances and SH rotations are tracked in input units; only positions
//! are converted, by applying the normalized displacement divided by `s`, so
//! kernels that have not moved are written back bit-identical.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::fill::{rasterize_opacity, select_fill_cells, spawn_fill_particles, FillConfig, OpacityGrid};
use crate::gs_io::{anisotropy_metric, clamp_anisotropy, load_gaussian_ply, save_gaussian_ply, GaussianCloud, GaussianKernel};
use crate::kinematics::{KernelKinematicState, KinematicsMode};
use crate::materials::{Material, MaterialModel, MaterialParams, NeoHookeanMode};
use crate::math::Vec3;
use crate::mpm::{
    initialize_particles, Boundaries, Boundary, EulerianGrid, SimConfig, Simulation, Threading, BOUNDARY_MARGIN,
};
use crate::render::{read_camera_path, render, Camera, CameraSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Splat PLY, relative to the config file.
    pub input: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Clamp every kernel's axis ratio to this bound before simulating.
    #[serde(default)]
    pub anisotropy_r: Option<f64>,
    pub domain: DomainConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub physics: PhysicsConfig,
    #[serde(default)]
    pub materials: Vec<MaterialAssignment>,
    #[serde(default)]
    pub velocity: Vec<VelocityEdit>,
    #[serde(default)]
    pub fill: FillSettings,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub cameras: Vec<CameraSpec>,
    /// JSON-lines camera file, relative to the config file.
    #[serde(default)]
    pub camera_path: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Region {
    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|d| self.min[d] <= x[d] && x[d] <= self.max[d])
    }

    pub fn center(&self) -> Vec3 {
        (Vec3::from(self.min) + Vec3::from(self.max)) * 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub region_min: [f64; 3],
    pub region_max: [f64; 3],
    pub grid_resolution: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub dt: f64,
    pub fps: f64,
    /// Simulated frames after the initial frame 0.
    pub frames: usize,
}

impl TimeConfig {
    /// `round(1 / (fps · dt))`, at least 1.
    pub fn substeps(&self) -> u32 {
        (1.0 / (self.fps * self.dt)).round().max(1.0) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KinematicsChoice {
    /// Total-F for elastic materials, incremental for plastic ones.
    #[default]
    Auto,
    TotalF,
    Incremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundaryConfig {
    Uniform(Boundary),
    PerFace(FaceBoundaries),
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig::Uniform(Boundary::Sticky)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FaceBoundaries {
    #[serde(default)]
    pub x_min: Boundary,
    #[serde(default)]
    pub x_max: Boundary,
    #[serde(default)]
    pub y_min: Boundary,
    #[serde(default)]
    pub y_max: Boundary,
    #[serde(default)]
    pub z_min: Boundary,
    #[serde(default)]
    pub z_max: Boundary,
}

impl BoundaryConfig {
    pub fn to_boundaries(&self) -> Boundaries {
        match self {
            BoundaryConfig::Uniform(b) => Boundaries::all(*b),
            BoundaryConfig::PerFace(f) => Boundaries {
                lower: [f.x_min, f.y_min, f.z_min],
                upper: [f.x_max, f.y_max, f.z_max],
            },
        }
    }
}

fn default_cfl() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    #[serde(default)]
    pub gravity: [f64; 3],
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default = "default_cfl")]
    pub cfl_limit: f64,
    #[serde(default)]
    pub rpic: bool,
    #[serde(default)]
    pub kinematics: KinematicsChoice,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            gravity: [0.0; 3],
            boundary: BoundaryConfig::default(),
            cfl_limit: default_cfl(),
            rpic: false,
            kinematics: KinematicsChoice::Auto,
        }
    }
}

/// A material for every kernel whose center lies in `region` (all kernels when
/// absent). Later entries override earlier ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialAssignment {
    pub model: String,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
    /// Degrees.
    #[serde(default)]
    pub friction_angle: f64,
    #[serde(default)]
    pub yield_stress: f64,
    #[serde(default)]
    pub viscosity: f64,
    #[serde(default)]
    pub neo_hookean: NeoHookeanMode,
    #[serde(default)]
    pub region: Option<Region>,
}

impl MaterialAssignment {
    pub fn to_material(&self) -> Result<Material> {
        let model = MaterialModel::from_name(&self.model)
            .ok_or_else(|| SimError::Parameter(format!("unknown material model `{}`", self.model)))?;
        let params = MaterialParams::new(self.youngs_modulus, self.poisson_ratio, self.density)?
            .with_friction_angle(self.friction_angle.to_radians())
            .with_yield_stress(self.yield_stress)
            .with_viscosity(self.viscosity);
        let mut m = Material::new(model, params)?;
        m.neo_hookean_mode = self.neo_hookean;
        Ok(m)
    }
}

/// Initial velocity `velocity + angular_velocity × (x − center)` for kernels in `region`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityEdit {
    #[serde(default)]
    pub region: Option<Region>,
    #[serde(default)]
    pub velocity: Option<[f64; 3]>,
    #[serde(default)]
    pub angular_velocity: Option<[f64; 3]>,
    /// Rotation center in input coordinates; defaults to the edit region's center.
    #[serde(default)]
    pub center: Option<[f64; 3]>,
}

fn default_threshold() -> f64 {
    0.5
}
fn default_ppc() -> usize {
    8
}
fn default_max_fill() -> usize {
    1_000_000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FillSettings {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_ppc")]
    pub particles_per_cell: usize,
    #[serde(default = "default_max_fill")]
    pub max_fill: usize,
    /// Defaults to the top-level seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for FillSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            threshold: default_threshold(),
            particles_per_cell: default_ppc(),
            max_fill: default_max_fill(),
            seed: None,
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("output")
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative to the config file.
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "yes")]
    pub ply: bool,
    /// Render every frame with every camera while simulating.
    #[serde(default)]
    pub render: bool,
    #[serde(default = "yes")]
    pub png: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            ply: true,
            render: false,
            png: true,
        }
    }
}

impl SceneConfig {
    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: SceneConfig = toml::from_str(text).map_err(|e| {
            let path = e
                .span()
                .map(|s| format!("byte {}..{}", s.start, s.end))
                .unwrap_or_else(|| "<root>".into());
            SimError::config(path, e.message().to_string())
        })?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    /// Uniform scale from input units to the normalized cube.
    pub fn normalization_scale(&self) -> f64 {
        let extent = (0..3)
            .map(|d| self.domain.region_max[d] - self.domain.region_min[d])
            .fold(0.0, f64::max);
        2.0 / extent
    }

    pub fn normalize(&self, x: &Vec3) -> Vec3 {
        (x - Vec3::from(self.domain.region_min)) * self.normalization_scale()
    }

    pub fn grid(&self) -> Result<EulerianGrid> {
        let n = self.domain.grid_resolution;
        let dx = 2.0 / n as f64;
        let pad = BOUNDARY_MARGIN;
        EulerianGrid::new(Vec3::repeat(-(pad as f64) * dx), dx, [n + 1 + 2 * pad; 3])
    }

    pub fn sim_config(&self, threading: Threading) -> SimConfig {
        SimConfig {
            dt: self.time.dt,
            gravity: Vec3::from(self.physics.gravity),
            cfl_limit: self.physics.cfl_limit,
            boundaries: self.physics.boundary.to_boundaries(),
            substeps_per_frame: self.time.substeps(),
            rpic: self.physics.rpic,
            threading,
        }
    }

    pub fn fill_config(&self) -> FillConfig {
        FillConfig {
            sigma_th: self.fill.threshold,
            particles_per_cell: self.fill.particles_per_cell,
            max_fill: self.fill.max_fill,
            seed: self.fill.seed.unwrap_or(self.seed),
        }
    }

    pub fn camera_list(&self) -> Result<Vec<Camera>> {
        let mut cams: Vec<Camera> = self.cameras.iter().map(|c| c.to_camera()).collect::<Result<_>>()?;
        if let Some(p) = &self.camera_path {
            cams.extend(read_camera_path(self.resolve(p))?);
        }
        Ok(cams)
    }

    /// Largest initial speed implied by the velocity edits, in normalized units.
    pub fn declared_max_speed(&self) -> f64 {
        let s = self.normalization_scale();
        let domain = Region {
            min: self.domain.region_min,
            max: self.domain.region_max,
        };
        self.velocity
            .iter()
            .map(|e| {
                let region = e.region.unwrap_or(domain);
                let center = e.center.map(Vec3::from).unwrap_or_else(|| region.center());
                let linear = e.velocity.map(Vec3::from).unwrap_or_default();
                let omega = e.angular_velocity.map(Vec3::from).unwrap_or_default();
                (0..8)
                    .map(|c| {
                        let corner = Vec3::new(
                            if c & 1 == 0 { region.min[0] } else { region.max[0] },
                            if c & 2 == 0 { region.min[1] } else { region.max[1] },
                            if c & 4 == 0 { region.min[2] } else { region.max[2] },
                        );
                        (linear + omega.cross(&((corner - center) * s))).norm()
                    })
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

/// One problem found by [`validate`], keyed by its config path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.errors.push(Issue {
            path: path.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.warnings.push(Issue {
            path: path.into(),
            message: message.into(),
        });
    }

    fn into_result(self) -> Result<()> {
        match self.errors.into_iter().next() {
            None => Ok(()),
            Some(i) => Err(SimError::config(i.path, i.message)),
        }
    }
}

/// Static checks on a config file; parse failures are reported as errors too.
pub fn validate(config_path: impl AsRef<Path>) -> ValidationReport {
    match SceneConfig::load(config_path) {
        Ok(cfg) => validate_config(&cfg),
        Err(e) => {
            let mut r = ValidationReport::default();
            match e {
                SimError::Config { path, message } => r.error(path, message),
                other => r.error("<file>", other.to_string()),
            }
            r
        }
    }
}

pub fn validate_config(cfg: &SceneConfig) -> ValidationReport {
    let mut r = ValidationReport::default();

    let input = cfg.resolve(&cfg.input);
    let cloud = if input.is_file() {
        match load_gaussian_ply(&input) {
            Ok(c) => Some(c),
            Err(e) => {
                r.error("input", e.to_string());
                None
            }
        }
    } else {
        r.error("input", format!("file not found: {}", input.display()));
        None
    };

    let d = &cfg.domain;
    let valid_region = (0..3).all(|i| d.region_min[i].is_finite() && d.region_max[i].is_finite() && d.region_min[i] < d.region_max[i]);
    if !valid_region {
        r.error("domain.region_max", "region_max must exceed region_min on every axis");
    }
    if d.grid_resolution < 2 {
        r.error("domain.grid_resolution", "need at least 2 cells");
    }
    let t = &cfg.time;
    if !(t.dt > 0.0 && t.dt.is_finite()) {
        r.error("time.dt", "must be positive");
    }
    if !(t.fps > 0.0 && t.fps.is_finite()) {
        r.error("time.fps", "must be positive");
    }
    if t.frames < 1 {
        r.error("time.frames", "must be at least 1");
    }
    if t.dt > 0.0 && t.fps > 0.0 {
        let exact = 1.0 / (t.fps * t.dt);
        if (exact - t.substeps() as f64).abs() > 1e-6 * exact {
            r.warn(
                "time.dt",
                format!(
                    "1/(fps·dt) = {exact} is not an integer; frames will be {} steps ({} s) apart",
                    t.substeps(),
                    t.substeps() as f64 * t.dt
                ),
            );
        }
    }
    let p = &cfg.physics;
    if !(p.cfl_limit > 0.0 && p.cfl_limit <= 1.0) {
        r.error("physics.cfl_limit", "must lie in (0, 1]");
    }
    if !p.gravity.iter().all(|g| g.is_finite()) {
        r.error("physics.gravity", "must be finite");
    }
    if let Some(ar) = cfg.anisotropy_r {
        if !(ar >= 1.0) {
            r.error("anisotropy_r", "must be at least 1");
        }
    }

    if cfg.materials.is_empty() {
        r.error("materials", "at least one material is required");
    }
    for (i, m) in cfg.materials.iter().enumerate() {
        if MaterialModel::from_name(&m.model).is_none() {
            r.error(format!("materials[{i}].model"), format!("unknown model `{}`", m.model));
            continue;
        }
        if !(0.0..0.5).contains(&m.poisson_ratio) {
            r.error(format!("materials[{i}].poisson_ratio"), format!("must lie in [0, 0.5), got {}", m.poisson_ratio));
            continue;
        }
        if let Err(e) = m.to_material() {
            r.error(format!("materials[{i}]"), e.to_string());
        }
    }
    for (i, e) in cfg.velocity.iter().enumerate() {
        if e.velocity.is_none() && e.angular_velocity.is_none() {
            r.error(format!("velocity[{i}]"), "needs `velocity` or `angular_velocity`");
        }
    }

    if cfg.fill.enabled {
        if let Err(e) = cfg.fill_config().validate() {
            r.error("fill", e.to_string());
        }
    }
    for (i, c) in cfg.cameras.iter().enumerate() {
        if let Err(e) = c.to_camera() {
            r.error(format!("cameras[{i}]"), e.to_string());
        }
    }
    if let Some(cp) = &cfg.camera_path {
        if let Err(e) = read_camera_path(cfg.resolve(cp)) {
            r.error("camera_path", e.to_string());
        }
    }
    if cfg.output.render && cfg.cameras.is_empty() && cfg.camera_path.is_none() {
        r.error("output.render", "rendering requested but no cameras given");
    }

    if let (Some(cloud), true) = (&cloud, valid_region) {
        let domain = Region {
            min: d.region_min,
            max: d.region_max,
        };
        let inside: Vec<&GaussianKernel> = cloud.kernels.iter().filter(|k| domain.contains(&k.center)).collect();
        if inside.is_empty() {
            r.error("domain", "simulation region contains no kernels");
        }
        for (i, m) in cfg.materials.iter().enumerate() {
            if let Some(reg) = m.region {
                if !inside.iter().any(|k| reg.contains(&k.center)) {
                    r.warn(format!("materials[{i}].region"), "matches no kernel in the simulation region");
                }
            }
        }
        if !cfg.materials.is_empty() {
            let uncovered = inside
                .iter()
                .filter(|k| !cfg.materials.iter().any(|m| m.region.is_none_or(|reg| reg.contains(&k.center))))
                .count();
            if uncovered > 0 {
                r.error("materials", format!("{uncovered} kernels in the region have no material"));
            }
        }
        for (i, e) in cfg.velocity.iter().enumerate() {
            if let Some(reg) = e.region {
                if !inside.iter().any(|k| reg.contains(&k.center)) {
                    r.warn(format!("velocity[{i}].region"), "matches no kernel in the simulation region");
                }
            }
        }
    }

    if valid_region && d.grid_resolution >= 2 && t.dt > 0.0 {
        let dx = 2.0 / d.grid_resolution as f64;
        let v = cfg.declared_max_speed();
        if v > 0.0 && t.dt * v / dx > p.cfl_limit {
            r.warn(
                "time.dt",
                format!(
                    "CFL violated at the declared initial speed {v}: dt·v/dx = {:.3} > {}; suggested dt ≤ {:e}",
                    t.dt * v / dx,
                    p.cfl_limit,
                    p.cfl_limit * dx / v
                ),
            );
        }
    }
    r
}

/// A scene ready to simulate, plus everything needed to write frames back in input units.
pub struct Scene {
    pub config: SceneConfig,
    /// Input cloud after the anisotropy clamp.
    pub input: GaussianCloud,
    /// Indices into `input` of simulated kernels; particle `j < sim_indices.len()` is `input[sim_indices[j]]`.
    pub sim_indices: Vec<usize>,
    /// Fill kernels in input units; particle `sim_indices.len() + f` is `fill[f]`.
    pub fill: Vec<GaussianKernel>,
    pub sim: Simulation,
    rest_positions: Vec<Vec3>,
    scale: f64,
}

impl Scene {
    pub fn build(config: SceneConfig, threading: Threading) -> Result<Self> {
        validate_config(&config).into_result()?;
        let mut input = load_gaussian_ply(config.resolve(&config.input))?;
        if let Some(r) = config.anisotropy_r {
            input = clamp_anisotropy(&input, r);
        }
        let s = config.normalization_scale();
        let region = Region {
            min: config.domain.region_min,
            max: config.domain.region_max,
        };
        let sim_indices: Vec<usize> = (0..input.len()).filter(|&i| region.contains(&input.kernels[i].center)).collect();

        let normalized = |k: &GaussianKernel| {
            let mut n = k.clone();
            n.center = config.normalize(&k.center);
            n.scale = k.scale * s;
            n
        };
        let sim_cloud = GaussianCloud {
            kernels: sim_indices.iter().map(|&i| normalized(&input.kernels[i])).collect(),
            sh_degree: input.sh_degree,
        };

        let grid = config.grid()?;
        let fill_norm = if config.fill.enabled {
            fill_kernels(&sim_cloud, &grid, &config.fill_config())?
        } else {
            Vec::new()
        };
        let min = Vec3::from(config.domain.region_min);
        let fill: Vec<GaussianKernel> = fill_norm
            .iter()
            .map(|k| {
                let mut f = k.clone();
                f.center = k.center / s + min;
                f.scale = k.scale / s;
                f
            })
            .collect();

        let mut all_norm = sim_cloud;
        all_norm.kernels.extend(fill_norm);
        let rest_input: Vec<&GaussianKernel> = sim_indices.iter().map(|&i| &input.kernels[i]).chain(fill.iter()).collect();

        let materials: Vec<Material> = config.materials.iter().map(|m| m.to_material()).collect::<Result<_>>()?;
        let material_ids: Vec<usize> = rest_input
            .iter()
            .map(|k| {
                config
                    .materials
                    .iter()
                    .rposition(|m| m.region.is_none_or(|r| r.contains(&k.center)))
                    .ok_or_else(|| SimError::config("materials", "kernel without material"))
            })
            .collect::<Result<_>>()?;

        let mut particles = initialize_particles(&all_norm, &materials, &material_ids, &grid)?;
        for edit in &config.velocity {
            let center = edit
                .center
                .map(Vec3::from)
                .or_else(|| edit.region.map(|r| r.center()))
                .unwrap_or_else(|| region.center());
            let c = config.normalize(&center);
            let linear = edit.velocity.map(Vec3::from).unwrap_or_default();
            let omega = edit.angular_velocity.map(Vec3::from).unwrap_or_default();
            for (p, k) in particles.iter_mut().zip(&rest_input) {
                if edit.region.is_none_or(|r| r.contains(&k.center)) {
                    p.v = linear + omega.cross(&(p.x - c));
                }
            }
        }

        let kinematics = rest_input
            .iter()
            .zip(&material_ids)
            .map(|(k, &m)| {
                let mode = match config.physics.kinematics {
                    KinematicsChoice::TotalF => KinematicsMode::TotalF,
                    KinematicsChoice::Incremental => KinematicsMode::Incremental,
                    KinematicsChoice::Auto if materials[m].model.is_plastic() => KinematicsMode::Incremental,
                    KinematicsChoice::Auto => KinematicsMode::TotalF,
                };
                KernelKinematicState::from_kernel(k, mode)
            })
            .collect();

        let rest_positions = particles.iter().map(|p| p.x).collect();
        let sim = Simulation::new(particles, grid, materials, config.sim_config(threading))?.with_kinematics(kinematics)?;
        Ok(Self {
            config,
            input,
            sim_indices,
            fill,
            sim,
            rest_positions,
            scale: s,
        })
    }

    /// The current state as a splat cloud in input coordinates: all input
    /// kernels in their original order, then the fill kernels.
    pub fn frame_cloud(&self) -> GaussianCloud {
        let n_sim = self.sim_indices.len();
        let exported: Vec<GaussianKernel> = (0..self.sim.particles.len())
            .into_par_iter()
            .map(|j| {
                let rest = if j < n_sim {
                    &self.input.kernels[self.sim_indices[j]]
                } else {
                    &self.fill[j - n_sim]
                };
                let moved = self.sim.particles[j].x - self.rest_positions[j];
                let center = if moved == Vec3::zeros() {
                    rest.center
                } else {
                    rest.center + moved / self.scale
                };
                self.sim.kinematics[j].export(rest, center)
            })
            .collect();
        let mut kernels = self.input.kernels.clone();
        for (j, &i) in self.sim_indices.iter().enumerate() {
            kernels[i] = exported[j].clone();
        }
        kernels.extend(exported[n_sim..].iter().cloned());
        GaussianCloud {
            kernels,
            sh_degree: self.input.sh_degree,
        }
    }

    pub fn diagnostics(&self, frame: usize, cloud: &GaussianCloud) -> Result<Diagnostics> {
        Ok(Diagnostics {
            frame,
            time: self.sim.time,
            total_mass: self.sim.total_mass(),
            momentum: self.sim.total_momentum(),
            kinetic_energy: self.sim.kinetic_energy(),
            elastic_energy: self.sim.elastic_energy()?,
            max_speed: self.sim.max_speed(),
            cfl_ratio: self.sim.cfl_ratio(),
            fill_count: self.fill.len(),
            anisotropy: anisotropy_metric(cloud, self.config.anisotropy_r.unwrap_or(1.0)),
        })
    }
}

/// Opacity-field fill of a normalized cloud over the cells of `grid`.
pub fn fill_kernels(cloud: &GaussianCloud, grid: &EulerianGrid, cfg: &FillConfig) -> Result<Vec<GaussianKernel>> {
    let shape = OpacityGrid::for_grid(grid);
    let og = rasterize_opacity(cloud, shape.origin, shape.dx, shape.dims);
    let cells = select_fill_cells(&og, cfg)?;
    spawn_fill_particles(&cells, &og, cloud, cfg)
}

/// One row of `diagnostics.csv`. Physical quantities are in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub frame: usize,
    pub time: f64,
    pub total_mass: f64,
    pub momentum: Vec3,
    pub kinetic_energy: f64,
    pub elastic_energy: f64,
    pub max_speed: f64,
    pub cfl_ratio: f64,
    pub fill_count: usize,
    pub anisotropy: f64,
}

impl Diagnostics {
    pub const HEADER: &'static str =
        "frame,time,total_mass,momentum_x,momentum_y,momentum_z,kinetic_energy,elastic_energy,max_speed,cfl_ratio,fill_count,anisotropy";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e}",
            self.frame,
            self.time,
            self.total_mass,
            self.momentum.x,
            self.momentum.y,
            self.momentum.z,
            self.kinetic_energy,
            self.elastic_energy,
            self.max_speed,
            self.cfl_ratio,
            self.fill_count,
            self.anisotropy
        )
    }
}

pub fn frame_file_name(frame: usize) -> String {
    format!("frame_{frame:05}.ply")
}

pub fn render_file_stem(frame: usize, camera: usize) -> String {
    format!("frame_{frame:05}_cam{camera}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub frames_written: usize,
    pub fill_count: usize,
    pub steps: u64,
    pub output_dir: PathBuf,
}

fn render_frame(cloud: &GaussianCloud, cams: &[Camera], dir: &Path, frame: usize, png: bool) -> Result<()> {
    for (c, cam) in cams.iter().enumerate() {
        let img = render(cloud, cam);
        let stem = render_file_stem(frame, c);
        img.write_ppm(dir.join(format!("{stem}.ppm")))?;
        if png {
            img.write_png(dir.join(format!("{stem}.png")))?;
        }
    }
    Ok(())
}

/// Run the full pipeline for a config file.
pub fn run(config_path: impl AsRef<Path>, threading: Threading) -> Result<RunSummary> {
    run_config(SceneConfig::load(config_path)?, threading)
}

pub fn run_config(config: SceneConfig, threading: Threading) -> Result<RunSummary> {
    let mut scene = Scene::build(config, threading)?;
    let cfg = scene.config.clone();
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir).map_err(|e| SimError::io(&dir, e))?;
    let cams = if cfg.output.render { cfg.camera_list()? } else { Vec::new() };

    let diag_path = dir.join("diagnostics.csv");
    let mut diag = fs::File::create(&diag_path).map_err(|e| SimError::io(&diag_path, e))?;
    writeln!(diag, "{}", Diagnostics::HEADER).map_err(|e| SimError::io(&diag_path, e))?;

    let mut emit = |scene: &Scene, frame: usize| -> Result<()> {
        let cloud = scene.frame_cloud();
        if cfg.output.ply {
            save_gaussian_ply(&cloud, dir.join(frame_file_name(frame)))?;
        }
        if !cams.is_empty() {
            render_frame(&cloud, &cams, &dir, frame, cfg.output.png)?;
        }
        let row = scene.diagnostics(frame, &cloud)?.csv_row();
        writeln!(diag, "{row}").map_err(|e| SimError::io(&diag_path, e))?;
        diag.flush().map_err(|e| SimError::io(&diag_path, e))
    };

    emit(&scene, 0)?;
    for frame in 1..=cfg.time.frames {
        scene.sim.advance_frame()?;
        emit(&scene, frame)?;
        log::info!("frame {frame}/{} (step {})", cfg.time.frames, scene.sim.step);
    }
    Ok(RunSummary {
        frames_written: cfg.time.frames + 1,
        fill_count: scene.fill.len(),
        steps: scene.sim.step,
        output_dir: dir,
    })
}

/// Fill-only preview: writes `filled.ply` (input plus fill kernels) to the output directory.
pub fn fill_preview(config_path: impl AsRef<Path>) -> Result<(PathBuf, usize)> {
    let mut config = SceneConfig::load(config_path)?;
    config.fill.enabled = true;
    let scene = Scene::build(config, Threading::Parallel)?;
    let dir = scene.config.output_dir();
    fs::create_dir_all(&dir).map_err(|e| SimError::io(&dir, e))?;
    let path = dir.join("filled.ply");
    save_gaussian_ply(&scene.frame_cloud(), &path)?;
    Ok((path, scene.fill.len()))
}

/// Frame selection such as `7`, `0..10` (half-open) or `0..=10`.
pub fn parse_frame_range(text: &str) -> Result<std::ops::RangeInclusive<usize>> {
    let bad = || SimError::Parameter(format!("bad frame range `{text}`; use N, A..B or A..=B"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    if let Some((a, b)) = text.split_once("..=") {
        Ok(num(a)?..=num(b)?)
    } else if let Some((a, b)) = text.split_once("..") {
        let (a, b) = (num(a)?, num(b)?);
        if b == 0 || b <= a {
            return Err(bad());
        }
        Ok(a..=b - 1)
    } else {
        let n = num(text)?;
        Ok(n..=n)
    }
}

/// Render previously written frame PLYs with the configured cameras.
pub fn render_frames(config_path: impl AsRef<Path>, frames: std::ops::RangeInclusive<usize>) -> Result<Vec<PathBuf>> {
    let cfg = SceneConfig::load(config_path)?;
    let cams = cfg.camera_list()?;
    if cams.is_empty() {
        return Err(SimError::config("cameras", "no cameras configured"));
    }
    let dir = cfg.output_dir();
    let mut written = Vec::new();
    for frame in frames {
        let cloud = load_gaussian_ply(dir.join(frame_file_name(frame)))?;
        render_frame(&cloud, &cams, &dir, frame, cfg.output.png)?;
        for c in 0..cams.len() {
            written.push(dir.join(format!("{}.ppm", render_file_stem(frame, c))));
        }
    }
    Ok(written)
}

/// Max and mean absolute difference of one field group.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct FieldDiff {
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameDiff {
    pub kernels: usize,
    pub position: FieldDiff,
    pub scale: FieldDiff,
    pub rotation: FieldDiff,
    pub opacity: FieldDiff,
    pub sh: FieldDiff,
    pub sh_rotation: FieldDiff,
}

/// Per-field differences of two clouds with identical kernel count and SH degree.
pub fn diff_clouds(a: &GaussianCloud, b: &GaussianCloud) -> Result<FrameDiff> {
    if a.len() != b.len() {
        return Err(SimError::StructuralDiff(format!("kernel counts differ: {} vs {}", a.len(), b.len())));
    }
    if a.sh_degree != b.sh_degree {
        return Err(SimError::StructuralDiff(format!("SH degrees differ: {} vs {}", a.sh_degree, b.sh_degree)));
    }
    fn field(values: impl Iterator<Item = f64>) -> FieldDiff {
        let (mut max, mut sum, mut n) = (0.0f64, 0.0, 0usize);
        for v in values {
            max = max.max(v);
            sum += v;
            n += 1;
        }
        FieldDiff {
            max,
            mean: if n > 0 { sum / n as f64 } else { 0.0 },
        }
    }
    let pairs = || a.kernels.iter().zip(&b.kernels);
    let quat = |p: &nalgebra::Quaternion<f64>, q: &nalgebra::Quaternion<f64>| (p.coords - q.coords).amax();
    Ok(FrameDiff {
        kernels: a.len(),
        position: field(pairs().map(|(x, y)| (x.center - y.center).amax())),
        scale: field(pairs().map(|(x, y)| (x.scale - y.scale).amax())),
        rotation: field(pairs().map(|(x, y)| quat(&x.rotation, &y.rotation))),
        opacity: field(pairs().map(|(x, y)| (x.opacity - y.opacity).abs())),
        sh: field(pairs().map(|(x, y)| {
            x.sh.iter()
                .zip(&y.sh)
                .flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]).abs()))
                .fold(0.0, f64::max)
        })),
        sh_rotation: field(pairs().map(|(x, y)| quat(&x.sh_rotation, &y.sh_rotation))),
    })
}

pub fn diff_frames(a: impl AsRef<Path>, b: impl AsRef<Path>) -> Result<FrameDiff> {
    diff_clouds(&load_gaussian_ply(a)?, &load_gaussian_ply(b)?)
}
