//! Explicit material point method on a dense grid.
//!
//! Transfers use tensor-product quadratic B-splines and the affine
//! particle-in-cell (APIC) scheme. A step is: zero grid, P2G, grid momentum
//! update with internal forces and gravity, boundary conditions, G2P with
//! deformation-gradient update and plastic projection, then the kinematics
//! hook that deforms the attached Gaussian kernels.
//!
//! Grid sums in parallel mode are gathered per node from particles binned by
//! stencil base, each node summing its particles in a fixed order. The result
//! does not depend on the number of worker threads. Reference mode scatters
//! particle by particle on one thread, which is the textbook summation order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::gs_io::GaussianCloud;
use crate::kinematics::KernelKinematicState;
use crate::materials::Material;
use crate::math::{is_finite_mat, Mat3, Vec3};

/// B-spline degree; only quadratic kernels are implemented.
pub const BSPLINE_DEGREE: usize = 2;
/// Node layers on each face that receive the boundary condition.
pub const BOUNDARY_MARGIN: usize = 2;

/// APIC inertia factor `12 / (Δx² (b + 1))` for `b = 2`.
fn apic_factor(dx: f64) -> f64 {
    12.0 / (dx * dx * (BSPLINE_DEGREE as f64 + 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Sticky,
    Slip,
    None,
}

/// Per-face conditions, indexed by axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Boundaries {
    pub lower: [Boundary; 3],
    pub upper: [Boundary; 3],
}

impl Boundaries {
    pub fn all(b: Boundary) -> Self {
        Self {
            lower: [b; 3],
            upper: [b; 3],
        }
    }
}

impl Default for Boundaries {
    fn default() -> Self {
        Self::all(Boundary::Sticky)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Threading {
    #[default]
    Parallel,
    /// Single-threaded scatter in particle order.
    Reference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub gravity: Vec3,
    pub cfl_limit: f64,
    pub boundaries: Boundaries,
    pub substeps_per_frame: u32,
    /// Keep only the skew part of `C` (rotational APIC), which damps shear modes.
    pub rpic: bool,
    pub threading: Threading,
}

impl SimConfig {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            gravity: Vec3::zeros(),
            cfl_limit: 0.5,
            boundaries: Boundaries::default(),
            substeps_per_frame: 1,
            rpic: false,
            threading: Threading::Parallel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Parameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.cfl_limit > 0.0 && self.cfl_limit <= 1.0) {
            return Err(SimError::Parameter(format!(
                "cfl_limit must lie in (0, 1], got {}",
                self.cfl_limit
            )));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(SimError::Parameter("gravity must be finite".into()));
        }
        if self.substeps_per_frame == 0 {
            return Err(SimError::Parameter("substeps_per_frame must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub x: Vec3,
    pub v: Vec3,
    pub mass: f64,
    /// Rest volume `V_p⁰`.
    pub volume: f64,
    pub f_e: Mat3,
    /// APIC affine velocity matrix.
    pub c: Mat3,
    pub material: usize,
    /// Velocity gradient from the most recent G2P.
    pub grad_v: Mat3,
}

impl ParticleState {
    pub fn new(x: Vec3, mass: f64, volume: f64, material: usize) -> Self {
        Self {
            x,
            v: Vec3::zeros(),
            mass,
            volume,
            f_e: Mat3::identity(),
            c: Mat3::zeros(),
            material,
            grad_v: Mat3::zeros(),
        }
    }
}

/// Dense node lattice: node `(i, j, k)` sits at `origin + (i, j, k) Δx`.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerianGrid {
    pub origin: Vec3,
    pub dx: f64,
    pub dims: [usize; 3],
    pub mass: Vec<f64>,
    pub velocity: Vec<Vec3>,
}

impl EulerianGrid {
    pub fn new(origin: Vec3, dx: f64, dims: [usize; 3]) -> Result<Self> {
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(SimError::Parameter(format!("grid spacing must be positive, got {dx}")));
        }
        if dims.iter().any(|&n| n < 4) {
            return Err(SimError::Parameter(format!(
                "grid needs at least 4 nodes per axis, got {dims:?}"
            )));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self {
            origin,
            dx,
            dims,
            mass: vec![0.0; n],
            velocity: vec![Vec3::zeros(); n],
        })
    }

    pub fn node_count(&self) -> usize {
        self.mass.len()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let i = index % self.dims[0];
        let j = (index / self.dims[0]) % self.dims[1];
        let k = index / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    pub fn node_position(&self, index: usize) -> Vec3 {
        let [i, j, k] = self.coords(index);
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.dx
    }

    /// Upper corner of the lattice.
    pub fn extent(&self) -> Vec3 {
        self.origin
            + Vec3::new(
                (self.dims[0] - 1) as f64,
                (self.dims[1] - 1) as f64,
                (self.dims[2] - 1) as f64,
            ) * self.dx
    }

    pub fn zero(&mut self) {
        self.mass.iter_mut().for_each(|m| *m = 0.0);
        self.velocity.iter_mut().for_each(|v| *v = Vec3::zeros());
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn total_momentum(&self) -> Vec3 {
        self.mass
            .iter()
            .zip(&self.velocity)
            .fold(Vec3::zeros(), |acc, (m, v)| acc + v * *m)
    }

    /// Cell containing `x`, if any.
    pub fn cell_of(&self, x: &Vec3) -> Option<[usize; 3]> {
        let mut cell = [0usize; 3];
        for d in 0..3 {
            let f = ((x[d] - self.origin[d]) / self.dx).floor();
            if !(f >= 0.0 && f < (self.dims[d] - 1) as f64) {
                return None;
            }
            cell[d] = f as usize;
        }
        Some(cell)
    }

    fn apply_boundaries(&mut self, b: &Boundaries) {
        let dims = self.dims;
        let hi = |d: usize| dims[d] - 1 - BOUNDARY_MARGIN;
        for (idx, v) in self.velocity.iter_mut().enumerate() {
            let i = idx % dims[0];
            let j = (idx / dims[0]) % dims[1];
            let k = idx / (dims[0] * dims[1]);
            for (d, c) in [i, j, k].into_iter().enumerate() {
                let face = if c <= BOUNDARY_MARGIN {
                    b.lower[d]
                } else if c >= hi(d) {
                    b.upper[d]
                } else {
                    continue;
                };
                match face {
                    Boundary::Sticky => *v = Vec3::zeros(),
                    Boundary::Slip => v[d] = 0.0,
                    Boundary::None => {}
                }
            }
        }
    }
}

/// Quadratic B-spline stencil of one particle: 3 nodes per axis starting at `base`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub base: [usize; 3],
    /// `weights[axis][offset]`
    pub weights: [[f64; 3]; 3],
    /// Derivatives of the 1D weights, already divided by Δx.
    pub derivatives: [[f64; 3]; 3],
}

impl Stencil {
    pub fn weight(&self, o: [usize; 3]) -> f64 {
        self.weights[0][o[0]] * self.weights[1][o[1]] * self.weights[2][o[2]]
    }

    pub fn gradient(&self, o: [usize; 3]) -> Vec3 {
        let w = &self.weights;
        let d = &self.derivatives;
        Vec3::new(
            d[0][o[0]] * w[1][o[1]] * w[2][o[2]],
            w[0][o[0]] * d[1][o[1]] * w[2][o[2]],
            w[0][o[0]] * w[1][o[1]] * d[2][o[2]],
        )
    }

    pub fn node(&self, grid: &EulerianGrid, o: [usize; 3]) -> usize {
        grid.index(self.base[0] + o[0], self.base[1] + o[1], self.base[2] + o[2])
    }

    /// The 27 `(node index, weight, weight gradient)` triples.
    pub fn iter<'a>(&'a self, grid: &'a EulerianGrid) -> impl Iterator<Item = (usize, f64, Vec3)> + 'a {
        OFFSETS
            .iter()
            .map(move |&o| (self.node(grid, o), self.weight(o), self.gradient(o)))
    }
}

const OFFSETS: [[usize; 3]; 27] = {
    let mut out = [[0usize; 3]; 27];
    let mut n = 0;
    while n < 27 {
        out[n] = [n % 3, (n / 3) % 3, n / 9];
        n += 1;
    }
    out
};

pub fn bspline_weights(xp: &Vec3, grid: &EulerianGrid) -> Result<Stencil> {
    let mut base = [0usize; 3];
    let mut weights = [[0.0; 3]; 3];
    let mut derivatives = [[0.0; 3]; 3];
    for d in 0..3 {
        let fx = (xp[d] - grid.origin[d]) / grid.dx;
        let b = (fx - 0.5).floor();
        if !(b >= 0.0 && b + 2.0 <= (grid.dims[d] - 1) as f64) {
            return Err(SimError::OutOfDomain { indices: vec![] });
        }
        let t = fx - b;
        weights[d] = [
            0.5 * (1.5 - t) * (1.5 - t),
            0.75 - (t - 1.0) * (t - 1.0),
            0.5 * (t - 0.5) * (t - 0.5),
        ];
        derivatives[d] = [(t - 1.5) / grid.dx, -2.0 * (t - 1.0) / grid.dx, (t - 0.5) / grid.dx];
        base[d] = b as usize;
    }
    Ok(Stencil {
        base,
        weights,
        derivatives,
    })
}

fn stencils(particles: &[ParticleState], grid: &EulerianGrid, threading: Threading) -> Result<Vec<Stencil>> {
    let compute = |p: &ParticleState| bspline_weights(&p.x, grid).ok();
    let raw: Vec<Option<Stencil>> = match threading {
        Threading::Parallel => particles.par_iter().map(compute).collect(),
        Threading::Reference => particles.iter().map(compute).collect(),
    };
    let outside: Vec<usize> = raw
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.is_none().then_some(i))
        .collect();
    if !outside.is_empty() {
        return Err(SimError::OutOfDomain { indices: outside });
    }
    Ok(raw.into_iter().flatten().collect())
}

/// Particles grouped by stencil base node, in ascending particle order.
struct Bins {
    start: Vec<usize>,
    order: Vec<usize>,
}

impl Bins {
    fn new(stencils: &[Stencil], grid: &EulerianGrid) -> Self {
        let mut start = vec![0usize; grid.node_count() + 1];
        for s in stencils {
            start[grid.index(s.base[0], s.base[1], s.base[2]) + 1] += 1;
        }
        for i in 0..grid.node_count() {
            start[i + 1] += start[i];
        }
        let mut fill = start.clone();
        let mut order = vec![0usize; stencils.len()];
        for (p, s) in stencils.iter().enumerate() {
            let key = grid.index(s.base[0], s.base[1], s.base[2]);
            order[fill[key]] = p;
            fill[key] += 1;
        }
        Self { start, order }
    }

    fn bin(&self, key: usize) -> &[usize] {
        &self.order[self.start[key]..self.start[key + 1]]
    }
}

/// Precomputed stencils and binning shared by the three transfer stages of a step.
struct Transfer {
    stencils: Vec<Stencil>,
    bins: Option<Bins>,
}

impl Transfer {
    fn new(particles: &[ParticleState], grid: &EulerianGrid, threading: Threading) -> Result<Self> {
        let stencils = stencils(particles, grid, threading)?;
        let bins = match threading {
            Threading::Parallel => Some(Bins::new(&stencils, grid)),
            Threading::Reference => None,
        };
        Ok(Self { stencils, bins })
    }

    /// `out[node] = Σ_p f(p, offset)` over every particle whose stencil covers the node.
    fn accumulate<T, F>(&self, grid: &EulerianGrid, out: &mut [T], f: F)
    where
        T: Copy + Send + Default + std::ops::AddAssign,
        F: Fn(usize, [usize; 3]) -> T + Sync,
    {
        match &self.bins {
            None => {
                out.iter_mut().for_each(|v| *v = T::default());
                for (p, s) in self.stencils.iter().enumerate() {
                    for &o in &OFFSETS {
                        out[s.node(grid, o)] += f(p, o);
                    }
                }
            }
            Some(bins) => {
                let [nx, ny, _] = grid.dims;
                out.par_chunks_mut(nx).enumerate().for_each(|(row, line)| {
                    let j = row % ny;
                    let k = row / ny;
                    for (i, slot) in line.iter_mut().enumerate() {
                        let mut acc = T::default();
                        for &o in &OFFSETS {
                            if i < o[0] || j < o[1] || k < o[2] {
                                continue;
                            }
                            let key = grid.index(i - o[0], j - o[1], k - o[2]);
                            for &p in bins.bin(key) {
                                acc += f(p, o);
                            }
                        }
                        *slot = acc;
                    }
                });
            }
        }
    }

    fn p2g(&self, particles: &[ParticleState], grid: &mut EulerianGrid) {
        #[derive(Clone, Copy, Default)]
        struct NodeSum {
            mass: f64,
            momentum: Vec3,
        }
        impl std::ops::AddAssign for NodeSum {
            fn add_assign(&mut self, o: Self) {
                self.mass += o.mass;
                self.momentum += o.momentum;
            }
        }

        let mut sums = vec![NodeSum::default(); grid.node_count()];
        let g = &*grid;
        self.accumulate(g, &mut sums, |p, o| {
            let s = &self.stencils[p];
            let part = &particles[p];
            let w = s.weight(o) * part.mass;
            let xi = node_offset_position(g, s, o);
            NodeSum {
                mass: w,
                momentum: (part.v + part.c * (xi - part.x)) * w,
            }
        });
        for (n, sum) in sums.iter().enumerate() {
            grid.mass[n] = sum.mass;
            grid.velocity[n] = if sum.mass > 0.0 {
                sum.momentum / sum.mass
            } else {
                Vec3::zeros()
            };
        }
    }

    fn grid_update(
        &self,
        particles: &[ParticleState],
        grid: &mut EulerianGrid,
        materials: &[Material],
        cfg: &SimConfig,
    ) -> Result<()> {
        let stress = |p: &ParticleState| -> Result<Mat3> {
            materials[p.material].kirchhoff(&p.f_e).map(|t| t * p.volume)
        };
        let weighted: Vec<Result<Mat3>> = match cfg.threading {
            Threading::Parallel => particles.par_iter().map(stress).collect(),
            Threading::Reference => particles.iter().map(stress).collect(),
        };
        let mut tau_v = Vec::with_capacity(particles.len());
        for (i, t) in weighted.into_iter().enumerate() {
            let t = t.map_err(|e| e.at_particle(i))?;
            if !is_finite_mat(&t) {
                return Err(blowup(i, cfg.dt));
            }
            tau_v.push(t);
        }

        let mut force = vec![Vec3::zeros(); grid.node_count()];
        self.accumulate(grid, &mut force, |p, o| -(tau_v[p] * self.stencils[p].gradient(o)));

        let dt = cfg.dt;
        for n in 0..grid.node_count() {
            let m = grid.mass[n];
            if m > 0.0 {
                grid.velocity[n] += force[n] * (dt / m) + cfg.gravity * dt;
                if !grid.velocity[n].iter().all(|x| x.is_finite()) {
                    let worst = (0..tau_v.len())
                        .max_by(|&a, &b| tau_v[a].norm().total_cmp(&tau_v[b].norm()))
                        .unwrap_or(0);
                    return Err(blowup(worst, dt));
                }
            }
        }
        grid.apply_boundaries(&cfg.boundaries);
        Ok(())
    }

    fn g2p(
        &self,
        particles: &mut [ParticleState],
        grid: &EulerianGrid,
        materials: &[Material],
        cfg: &SimConfig,
    ) -> Result<()> {
        let lo = grid.origin.add_scalar(grid.dx);
        let hi = grid.origin
            + Vec3::new(
                (grid.dims[0] - 2) as f64,
                (grid.dims[1] - 2) as f64,
                (grid.dims[2] - 2) as f64,
            ) * grid.dx;
        let max_step = grid.dx * grid.dims.iter().copied().max().unwrap_or(0) as f64;
        let update = |(i, p): (usize, &mut ParticleState)| -> Result<()> {
            let s = &self.stencils[i];
            let mut v = Vec3::zeros();
            let mut b = Mat3::zeros();
            let mut grad_v = Mat3::zeros();
            for &o in &OFFSETS {
                let vi = grid.velocity[s.node(grid, o)];
                let w = s.weight(o);
                let xi = node_offset_position(grid, s, o);
                v += vi * w;
                b += vi * (xi - p.x).transpose() * w;
                grad_v += vi * s.gradient(o).transpose();
            }
            let mut c = b * apic_factor(grid.dx);
            if cfg.rpic {
                c = (c - c.transpose()) * 0.5;
            }
            if !(v.iter().all(|x| x.is_finite()) && v.norm() * cfg.dt <= max_step) || !is_finite_mat(&grad_v) {
                return Err(blowup(i, cfg.dt));
            }
            let f_trial = (Mat3::identity() + grad_v * cfg.dt) * p.f_e;
            let f_e = materials[p.material]
                .return_map(&f_trial, cfg.dt)
                .map_err(|e| e.at_particle(i))?;
            let det = f_e.determinant();
            if !(det > 0.0) {
                return Err(SimError::DegenerateDeformation {
                    det,
                    particle: Some(i),
                });
            }
            p.v = v;
            p.c = c;
            p.grad_v = grad_v;
            p.f_e = f_e;
            p.x = (p.x + v * cfg.dt).sup(&lo).inf(&hi);
            Ok(())
        };
        let results: Vec<Result<()>> = match cfg.threading {
            Threading::Parallel => particles.par_iter_mut().enumerate().map(update).collect(),
            Threading::Reference => particles.iter_mut().enumerate().map(update).collect(),
        };
        results.into_iter().collect()
    }
}

fn node_offset_position(grid: &EulerianGrid, s: &Stencil, o: [usize; 3]) -> Vec3 {
    grid.origin
        + Vec3::new(
            (s.base[0] + o[0]) as f64,
            (s.base[1] + o[1]) as f64,
            (s.base[2] + o[2]) as f64,
        ) * grid.dx
}

fn blowup(particle: usize, dt: f64) -> SimError {
    SimError::NumericalBlowup { step: 0, particle, dt }
}

/// Scatter particle mass and APIC momentum to a zeroed grid and convert to velocities.
pub fn p2g(particles: &[ParticleState], grid: &mut EulerianGrid, threading: Threading) -> Result<()> {
    let t = Transfer::new(particles, grid, threading)?;
    t.p2g(particles, grid);
    Ok(())
}

/// Add internal forces and gravity to grid velocities, then apply boundary conditions.
pub fn grid_update(
    grid: &mut EulerianGrid,
    particles: &[ParticleState],
    materials: &[Material],
    cfg: &SimConfig,
) -> Result<()> {
    let t = Transfer::new(particles, grid, cfg.threading)?;
    t.grid_update(particles, grid, materials, cfg)
}

/// Gather velocities, `C` and `∇v`, move particles, update and project `F_E`.
pub fn g2p(
    particles: &mut [ParticleState],
    grid: &EulerianGrid,
    materials: &[Material],
    cfg: &SimConfig,
) -> Result<()> {
    let t = Transfer::new(particles, grid, cfg.threading)?;
    t.g2p(particles, grid, materials, cfg)
}

/// Particles for the kernels of `cloud`, one per kernel.
///
/// The rest volume of a particle is the cell volume divided by the number of
/// kernel centers in its cell; mass is density times that volume.
pub fn initialize_particles(
    cloud: &GaussianCloud,
    materials: &[Material],
    material_ids: &[usize],
    grid: &EulerianGrid,
) -> Result<Vec<ParticleState>> {
    if cloud.is_empty() {
        return Err(SimError::EmptyCloud("no kernels to simulate".into()));
    }
    if material_ids.len() != cloud.len() {
        return Err(SimError::Parameter(format!(
            "{} material ids for {} kernels",
            material_ids.len(),
            cloud.len()
        )));
    }
    if let Some(&bad) = material_ids.iter().find(|&&m| m >= materials.len()) {
        return Err(SimError::Parameter(format!("material id {bad} out of range")));
    }

    let mut outside = Vec::new();
    let mut cells = Vec::with_capacity(cloud.len());
    for (i, k) in cloud.kernels.iter().enumerate() {
        match (grid.cell_of(&k.center), bspline_weights(&k.center, grid)) {
            (Some(c), Ok(_)) => cells.push(grid.index(c[0], c[1], c[2])),
            _ => outside.push(i),
        }
    }
    if !outside.is_empty() {
        return Err(SimError::OutOfDomain { indices: outside });
    }

    let mut count = std::collections::HashMap::<usize, usize>::new();
    for &c in &cells {
        *count.entry(c).or_default() += 1;
    }
    let cell_volume = grid.dx.powi(3);
    Ok(cloud
        .kernels
        .iter()
        .zip(&cells)
        .zip(material_ids)
        .map(|((k, c), &m)| {
            let volume = cell_volume / count[c] as f64;
            ParticleState::new(k.center, materials[m].params.density * volume, volume, m)
        })
        .collect())
}

/// Full simulation state: particles, grid, materials and optional kernel kinematics.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub particles: Vec<ParticleState>,
    pub grid: EulerianGrid,
    pub materials: Vec<Material>,
    pub config: SimConfig,
    /// Empty, or one entry per particle.
    pub kinematics: Vec<KernelKinematicState>,
    pub step: u64,
    pub time: f64,
    cfl_warned: bool,
}

impl Simulation {
    pub fn new(
        particles: Vec<ParticleState>,
        grid: EulerianGrid,
        materials: Vec<Material>,
        config: SimConfig,
    ) -> Result<Self> {
        config.validate()?;
        for (i, p) in particles.iter().enumerate() {
            if p.material >= materials.len() {
                return Err(SimError::Parameter(format!(
                    "particle {i} uses material {} of {}",
                    p.material,
                    materials.len()
                )));
            }
            if !(p.mass > 0.0 && p.volume > 0.0) {
                return Err(SimError::Parameter(format!(
                    "particle {i} needs positive mass and volume"
                )));
            }
        }
        Ok(Self {
            particles,
            grid,
            materials,
            config,
            kinematics: Vec::new(),
            step: 0,
            time: 0.0,
            cfl_warned: false,
        })
    }

    pub fn with_kinematics(mut self, states: Vec<KernelKinematicState>) -> Result<Self> {
        if states.len() != self.particles.len() {
            return Err(SimError::Parameter(format!(
                "{} kinematic states for {} particles",
                states.len(),
                self.particles.len()
            )));
        }
        self.kinematics = states;
        Ok(self)
    }

    /// One explicit step.
    pub fn advance_step(&mut self) -> Result<()> {
        let step = self.step;
        self.advance_inner().map_err(|e| match e {
            SimError::NumericalBlowup { particle, dt, .. } => SimError::NumericalBlowup { step, particle, dt },
            other => other,
        })?;
        self.step += 1;
        self.time += self.config.dt;

        let ratio = self.cfl_ratio();
        if ratio > self.config.cfl_limit {
            if !self.cfl_warned {
                log::warn!(
                    "CFL ratio {ratio:.3} exceeds limit {} at step {}; suggested dt ≤ {:e}",
                    self.config.cfl_limit,
                    self.step,
                    self.config.cfl_limit * self.grid.dx / self.max_speed()
                );
                self.cfl_warned = true;
            }
        } else {
            self.cfl_warned = false;
        }
        Ok(())
    }

    fn advance_inner(&mut self) -> Result<()> {
        let cfg = &self.config;
        self.grid.zero();
        let transfer = Transfer::new(&self.particles, &self.grid, cfg.threading)?;
        transfer.p2g(&self.particles, &mut self.grid);
        transfer.grid_update(&self.particles, &mut self.grid, &self.materials, cfg)?;
        transfer.g2p(&mut self.particles, &self.grid, &self.materials, cfg)?;

        let dt = cfg.dt;
        let particles = &self.particles;
        let advance = |(i, k): (usize, &mut KernelKinematicState)| {
            k.advance(&particles[i].grad_v, dt).map_err(|e| e.at_particle(i))
        };
        let results: Vec<Result<()>> = match cfg.threading {
            Threading::Parallel => self.kinematics.par_iter_mut().enumerate().map(advance).collect(),
            Threading::Reference => self.kinematics.iter_mut().enumerate().map(advance).collect(),
        };
        results.into_iter().collect()
    }

    /// `substeps_per_frame` steps.
    pub fn advance_frame(&mut self) -> Result<()> {
        for _ in 0..self.config.substeps_per_frame {
            self.advance_step()?;
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.particles.iter().map(|p| p.mass).sum()
    }

    pub fn total_momentum(&self) -> Vec3 {
        self.particles.iter().fold(Vec3::zeros(), |acc, p| acc + p.v * p.mass)
    }

    pub fn center_of_mass(&self) -> Vec3 {
        self.particles.iter().fold(Vec3::zeros(), |acc, p| acc + p.x * p.mass) / self.total_mass()
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.particles.iter().map(|p| 0.5 * p.mass * p.v.norm_squared()).sum()
    }

    pub fn elastic_energy(&self) -> Result<f64> {
        self.particles
            .iter()
            .map(|p| Ok(p.volume * self.materials[p.material].energy_density(&p.f_e)?))
            .sum()
    }

    pub fn max_speed(&self) -> f64 {
        self.particles.iter().map(|p| p.v.norm()).fold(0.0, f64::max)
    }

    /// `dt · max‖v‖ / Δx`.
    pub fn cfl_ratio(&self) -> f64 {
        self.config.dt * self.max_speed() / self.grid.dx
    }
}
