//! Interior filling of hollow splat reconstructions.
//!
//! The kernel opacities are summed into a scalar field on a cell grid. A void
//! cell is filled when rays along all six axis directions hit the surface
//! (a low-to-high threshold crossing) and a +x ray crosses it an odd number
//! of times. New kernels are spawned at low-discrepancy positions inside each
//! selected cell and copy opacity and SH from the nearest original kernel.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::gs_io::{GaussianCloud, GaussianKernel};
use crate::math::Vec3;
use crate::mpm::EulerianGrid;

/// Kernels are evaluated out to this Mahalanobis radius.
pub const TRUNCATION_RADIUS: f64 = 3.0;

/// Cell-centered scalar field; cell `(i, j, k)` is centered at `origin + (i + ½, j + ½, k + ½) Δx`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpacityGrid {
    pub origin: Vec3,
    pub dx: f64,
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl OpacityGrid {
    pub fn zeros(origin: Vec3, dx: f64, dims: [usize; 3]) -> Self {
        Self {
            origin,
            dx,
            dims,
            values: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    /// Field over the cells of a simulation grid.
    pub fn for_grid(grid: &EulerianGrid) -> Self {
        Self::zeros(grid.origin, grid.dx, grid.dims.map(|n| n - 1))
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, c: [usize; 3]) -> f64 {
        self.values[self.index(c[0], c[1], c[2])]
    }

    pub fn cell_center(&self, c: [usize; 3]) -> Vec3 {
        self.origin + Vec3::new(c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5) * self.dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillConfig {
    pub sigma_th: f64,
    pub particles_per_cell: usize,
    pub max_fill: usize,
    pub seed: u64,
}

impl Default for FillConfig {
    fn default() -> Self {
        Self {
            sigma_th: 0.5,
            particles_per_cell: 8,
            max_fill: 1_000_000,
            seed: 0,
        }
    }
}

impl FillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_th > 0.0 && self.sigma_th.is_finite()) {
            return Err(SimError::Parameter(format!(
                "fill threshold must be positive, got {}",
                self.sigma_th
            )));
        }
        if self.particles_per_cell == 0 || self.max_fill == 0 {
            return Err(SimError::Parameter(
                "particles_per_cell and max_fill must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Sum of `σ_p exp(−½ (x − x_p)ᵀ A_p⁻¹ (x − x_p))` at every cell center.
pub fn rasterize_opacity(cloud: &GaussianCloud, origin: Vec3, dx: f64, dims: [usize; 3]) -> OpacityGrid {
    struct Footprint {
        center: Vec3,
        inverse: crate::Mat3,
        opacity: f64,
        lo: [usize; 3],
        hi: [usize; 3],
    }

    let mut og = OpacityGrid::zeros(origin, dx, dims);
    let footprints: Vec<Footprint> = cloud
        .kernels
        .iter()
        .enumerate()
        .filter_map(|(i, k)| {
            let cov = k.covariance();
            let Some(inverse) = cov.try_inverse().filter(|m| m.iter().all(|x| x.is_finite())) else {
                log::warn!("kernel {i} has a singular covariance; skipped in the opacity field");
                return None;
            };
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            for d in 0..3 {
                let reach = TRUNCATION_RADIUS * cov[(d, d)].sqrt();
                let a = ((k.center[d] - reach - origin[d]) / dx - 0.5).ceil().max(0.0);
                let b = ((k.center[d] + reach - origin[d]) / dx - 0.5).floor();
                if b < 0.0 || a > (dims[d] - 1) as f64 {
                    return None;
                }
                lo[d] = a as usize;
                hi[d] = (b as usize).min(dims[d] - 1);
            }
            Some(Footprint {
                center: k.center,
                inverse,
                opacity: k.opacity,
                lo,
                hi,
            })
        })
        .collect();

    let slab = dims[0] * dims[1];
    let r2 = TRUNCATION_RADIUS * TRUNCATION_RADIUS;
    og.values.par_chunks_mut(slab).enumerate().for_each(|(k, plane)| {
        for f in footprints.iter().filter(|f| f.lo[2] <= k && k <= f.hi[2]) {
            for j in f.lo[1]..=f.hi[1] {
                for i in f.lo[0]..=f.hi[0] {
                    let x = origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * dx;
                    let d = x - f.center;
                    let m2 = d.dot(&(f.inverse * d));
                    if m2 <= r2 {
                        plane[i + dims[0] * j] += f.opacity * (-0.5 * m2).exp();
                    }
                }
            }
        }
    });
    og
}

/// Positions `j` along an ordered ray where `values[j − 1] < σ_th < values[j]`.
pub fn detect_intersection(values: &[f64], sigma_th: f64) -> Vec<usize> {
    (1..values.len())
        .filter(|&j| values[j - 1] < sigma_th && values[j] > sigma_th)
        .collect()
}

/// Void cells enclosed by the thresholded surface, in x-fastest order.
pub fn select_fill_cells(og: &OpacityGrid, cfg: &FillConfig) -> Result<Vec<[usize; 3]>> {
    cfg.validate()?;
    let th = cfg.sigma_th;
    let [nx, ny, nz] = og.dims;
    let n = og.values.len();

    // Crossing counts for the rays leaving each cell in the ± direction of each axis.
    let mut forward = [vec![0u32; n], vec![0u32; n], vec![0u32; n]];
    let mut backward = [vec![0u32; n], vec![0u32; n], vec![0u32; n]];
    for axis in 0..3 {
        let len = og.dims[axis];
        let stride = match axis {
            0 => 1,
            1 => nx,
            _ => nx * ny,
        };
        let starts: Vec<usize> = (0..n)
            .filter(|&c| {
                let idx = [c % nx, (c / nx) % ny, c / (nx * ny)];
                idx[axis] == 0
            })
            .collect();
        let lines: Vec<(Vec<u32>, Vec<u32>)> = starts
            .par_iter()
            .map(|&start| {
                let line: Vec<f64> = (0..len).map(|t| og.values[start + t * stride]).collect();
                let mut fwd = vec![0u32; len];
                let mut bwd = vec![0u32; len];
                for t in (0..len.saturating_sub(1)).rev() {
                    let up = line[t] < th && line[t + 1] > th;
                    fwd[t] = fwd[t + 1] + up as u32;
                }
                for t in 1..len {
                    let up = line[t] < th && line[t - 1] > th;
                    bwd[t] = bwd[t - 1] + up as u32;
                }
                (fwd, bwd)
            })
            .collect();
        for (&start, (fwd, bwd)) in starts.iter().zip(lines) {
            for t in 0..len {
                forward[axis][start + t * stride] = fwd[t];
                backward[axis][start + t * stride] = bwd[t];
            }
        }
    }

    let selected: Vec<[usize; 3]> = (0..n)
        .filter(|&c| {
            og.values[c] < th
                && (0..3).all(|a| forward[a][c] > 0 && backward[a][c] > 0)
                && forward[0][c] % 2 == 1
        })
        .map(|c| [c % nx, (c / nx) % ny, c / (nx * ny)])
        .collect();
    debug_assert!(selected.iter().all(|c| c[2] < nz));

    let spawned = selected.len().saturating_mul(cfg.particles_per_cell);
    if spawned > cfg.max_fill {
        return Err(SimError::FillOverflow {
            count: spawned,
            cap: cfg.max_fill,
        });
    }
    Ok(selected)
}

/// Exact nearest-center queries over a uniform hash of kernel centers.
pub struct NearestKernel {
    centers: Vec<Vec3>,
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl NearestKernel {
    pub fn new(cloud: &GaussianCloud) -> Result<Self> {
        if cloud.is_empty() {
            return Err(SimError::EmptyCloud("fill needs source kernels to inherit from".into()));
        }
        let centers: Vec<Vec3> = cloud.kernels.iter().map(|k| k.center).collect();
        let (min, max) = centers.iter().fold(
            (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), c| (lo.inf(c), hi.sup(c)),
        );
        let extent = (max - min).max();
        let cell = if extent > 0.0 {
            (extent / (centers.len() as f64).cbrt()).max(extent * 1e-6)
        } else {
            1.0
        };
        let key = |x: &Vec3| -> [i64; 3] { [0, 1, 2].map(|d| (x[d] / cell).floor() as i64) };
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, c) in centers.iter().enumerate() {
            buckets.entry(key(c)).or_default().push(i);
        }
        Ok(Self {
            lo: key(&min),
            hi: key(&max),
            centers,
            cell,
            buckets,
        })
    }

    /// Index of the closest center; ties go to the lower index.
    pub fn query(&self, x: &Vec3) -> usize {
        let q = [0, 1, 2].map(|d| (x[d] / self.cell).floor() as i64);
        let max_ring = (0..3)
            .map(|d| (q[d] - self.lo[d]).abs().max((self.hi[d] - q[d]).abs()))
            .max()
            .unwrap_or(0);
        let mut best: Option<(f64, usize)> = None;
        for ring in 0..=max_ring {
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let Some(bucket) = self.buckets.get(&[q[0] + dx, q[1] + dy, q[2] + dz]) else {
                            continue;
                        };
                        for &i in bucket {
                            let d2 = (self.centers[i] - x).norm_squared();
                            let better = match best {
                                None => true,
                                Some((bd, bi)) => d2 < bd || (d2 == bd && i < bi),
                            };
                            if better {
                                best = Some((d2, i));
                            }
                        }
                    }
                }
            }
            // anything in a farther ring is at least `ring · cell` away
            if let Some((bd, _)) = best {
                let reach = ring as f64 * self.cell;
                if bd < reach * reach {
                    break;
                }
            }
        }
        best.map(|(_, i)| i).unwrap_or(0)
    }
}

/// Radius of the sphere of volume `V`: `(3V / 4π)^{1/3}`.
pub fn fill_radius(volume: f64) -> f64 {
    (3.0 * volume / (4.0 * std::f64::consts::PI)).cbrt()
}

const PLASTIC_NUMBER: f64 = 1.324_717_957_244_746;

/// `particles_per_cell` isotropic kernels per selected cell.
pub fn spawn_fill_particles(
    cells: &[[usize; 3]],
    og: &OpacityGrid,
    cloud: &GaussianCloud,
    cfg: &FillConfig,
) -> Result<Vec<GaussianKernel>> {
    cfg.validate()?;
    if cells.is_empty() {
        return Ok(Vec::new());
    }
    let nearest = NearestKernel::new(cloud)?;
    let alpha = Vec3::new(
        1.0 / PLASTIC_NUMBER,
        1.0 / PLASTIC_NUMBER.powi(2),
        1.0 / PLASTIC_NUMBER.powi(3),
    );
    let ppc = cfg.particles_per_cell;
    let radius = fill_radius(og.dx.powi(3) / ppc as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let positions: Vec<Vec3> = cells
        .iter()
        .flat_map(|c| {
            let shift = Vec3::new(rng.random(), rng.random(), rng.random());
            let corner = og.origin + Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64) * og.dx;
            (1..=ppc).map(move |s| {
                let offset = (shift + alpha * s as f64).map(|v| v.fract());
                corner + offset * og.dx
            })
        })
        .collect();

    let sources: Vec<usize> = positions.par_iter().map(|x| nearest.query(x)).collect();
    Ok(positions
        .into_iter()
        .zip(sources)
        .map(|(x, src)| {
            let s = &cloud.kernels[src];
            let mut k = GaussianKernel::isotropic(x, radius, s.opacity, s.sh[0]);
            k.sh = s.sh.clone();
            k
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossing_examples() {
        assert_eq!(detect_intersection(&[0.0, 0.9], 0.5), vec![1]);
        assert!(detect_intersection(&[0.0, 0.1, 0.2, 0.4], 0.5).is_empty());
        assert_eq!(detect_intersection(&[0.0, 1.0, 0.0, 1.0], 0.5), vec![1, 3]);
        assert!(detect_intersection(&[1.0, 0.0], 0.5).is_empty());
    }

    #[test]
    fn radius_examples() {
        assert!((fill_radius(1.0) - 0.620_350_490_899_400).abs() < 1e-12);
        assert!((fill_radius(0.125) - (3.0 * 0.125 / (4.0 * std::f64::consts::PI)).cbrt()).abs() < 1e-15);
    }

    #[test]
    fn single_kernel_field() {
        let k = GaussianKernel::isotropic(Vec3::new(2.5, 2.5, 2.5), 1.0, 0.8, [0.0; 3]);
        let cloud = GaussianCloud::new(vec![k], 0).unwrap();
        let og = rasterize_opacity(&cloud, Vec3::zeros(), 1.0, [6, 6, 6]);
        assert_eq!(og.get([2, 2, 2]), 0.8);
        // (3.5, 2.5, 3.5) is at Mahalanobis distance √2
        assert!((og.get([3, 2, 3]) - 0.8 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn empty_grid_selects_nothing() {
        let og = OpacityGrid::zeros(Vec3::zeros(), 1.0, [5, 5, 5]);
        assert!(select_fill_cells(&og, &FillConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn box_shell_center_is_selected() {
        let mut og = OpacityGrid::zeros(Vec3::zeros(), 1.0, [7, 7, 7]);
        for k in 1..6 {
            for j in 1..6 {
                for i in 1..6 {
                    let on_shell = [i, j, k].iter().any(|&c| c == 1 || c == 5);
                    if on_shell {
                        let idx = og.index(i, j, k);
                        og.values[idx] = 1.0;
                    }
                }
            }
        }
        let cells = select_fill_cells(&og, &FillConfig::default()).unwrap();
        assert_eq!(cells.len(), 27);
        assert!(cells.contains(&[3, 3, 3]));
        assert!(!cells.contains(&[0, 3, 3]));

        let cfg = FillConfig {
            max_fill: 26 * 8,
            ..FillConfig::default()
        };
        assert!(matches!(
            select_fill_cells(&og, &cfg),
            Err(SimError::FillOverflow { count: 216, cap: 208 })
        ));
    }

    #[test]
    fn spawn_needs_a_source() {
        let og = OpacityGrid::zeros(Vec3::zeros(), 1.0, [4, 4, 4]);
        let empty = GaussianCloud::new(vec![], 0).unwrap();
        assert!(matches!(
            spawn_fill_particles(&[[1, 1, 1]], &og, &empty, &FillConfig::default()),
            Err(SimError::EmptyCloud(_))
        ));
    }
}
