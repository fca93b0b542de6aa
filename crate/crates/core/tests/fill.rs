mod common;

use common::*;
use proptest::prelude::*;
use splatsim_core::fill::{
    detect_intersection, fill_radius, rasterize_opacity, select_fill_cells, spawn_fill_particles, FillConfig,
    NearestKernel, OpacityGrid, TRUNCATION_RADIUS,
};
use splatsim_core::mpm::EulerianGrid;
use splatsim_core::scene::fill_kernels;
use splatsim_core::{GaussianCloud, SimError, Vec3};

fn brute_force_opacity(cloud: &GaussianCloud, og: &OpacityGrid) -> Vec<f64> {
    let [nx, ny, nz] = og.dims;
    let mut out = vec![0.0; nx * ny * nz];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let x = og.cell_center([i, j, k]);
                for kern in &cloud.kernels {
                    let d = x - kern.center;
                    let m2 = d.dot(&(kern.covariance().try_inverse().unwrap() * d));
                    if m2 <= TRUNCATION_RADIUS * TRUNCATION_RADIUS {
                        out[og.index(i, j, k)] += kern.opacity * (-0.5 * m2).exp();
                    }
                }
            }
        }
    }
    out
}

/// The fill rule restated cell by cell: every axis ray in both directions sees
/// an upward crossing, and the +x ray sees an odd number of them.
fn brute_force_selection(og: &OpacityGrid, th: f64) -> Vec<[usize; 3]> {
    let dims = og.dims;
    let mut out = Vec::new();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let c = [i, j, k];
                if og.get(c) >= th {
                    continue;
                }
                let mut ok = true;
                let mut plus_x = 0;
                for axis in 0..3 {
                    let at = |t: usize| {
                        let mut p = c;
                        p[axis] = t;
                        og.get(p)
                    };
                    let fwd = (c[axis]..dims[axis] - 1).filter(|&t| at(t) < th && at(t + 1) > th).count();
                    let bwd = (1..=c[axis]).filter(|&t| at(t) < th && at(t - 1) > th).count();
                    ok &= fwd > 0 && bwd > 0;
                    if axis == 0 {
                        plus_x = fwd;
                    }
                }
                if ok && plus_x % 2 == 1 {
                    out.push(c);
                }
            }
        }
    }
    out
}

fn random_field(seed: u64, dims: [usize; 3]) -> OpacityGrid {
    let mut rng = rng(seed);
    let mut og = OpacityGrid::zeros(Vec3::zeros(), 0.1, dims);
    for v in og.values.iter_mut() {
        *v = if uniform(&mut rng, 0.0, 1.0) < 0.3 { 1.0 } else { 0.0 };
    }
    og
}

fn box_shell(n: usize, open_top: bool) -> OpacityGrid {
    let mut og = OpacityGrid::zeros(Vec3::zeros(), 1.0, [n, n, n]);
    for k in 2..n - 2 {
        for j in 2..n - 2 {
            for i in 2..n - 2 {
                let wall = [i, j, k].iter().any(|&c| c == 2 || c == n - 3);
                let top = k == n - 3;
                if wall && !(open_top && top) {
                    let idx = og.index(i, j, k);
                    og.values[idx] = 1.0;
                }
            }
        }
    }
    og
}

#[test]
fn rasterization_matches_direct_summation() {
    let mut rng = rng(21);
    let kernels: Vec<_> = (0..60).map(|_| random_kernel(&mut rng, 0)).collect();
    let cloud = GaussianCloud::new(kernels, 0).unwrap();
    let og = rasterize_opacity(&cloud, Vec3::repeat(-1.2), 0.1, [24, 24, 24]);
    let expect = brute_force_opacity(&cloud, &og);
    for (a, b) in og.values.iter().zip(&expect) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn rasterization_is_additive() {
    let mut rng = rng(22);
    let a: Vec<_> = (0..20).map(|_| random_kernel(&mut rng, 0)).collect();
    let b: Vec<_> = (0..20).map(|_| random_kernel(&mut rng, 0)).collect();
    let both: Vec<_> = a.iter().chain(&b).cloned().collect();
    let r = |k: Vec<_>| rasterize_opacity(&GaussianCloud::new(k, 0).unwrap(), Vec3::repeat(-1.0), 0.125, [16, 16, 16]);
    let (ra, rb, rab) = (r(a), r(b), r(both));
    for i in 0..rab.values.len() {
        assert!((ra.values[i] + rb.values[i] - rab.values[i]).abs() < 1e-12);
    }
}

#[test]
fn intersection_examples() {
    assert_eq!(detect_intersection(&[0.0, 1.0, 0.0, 1.0], 0.5), vec![1, 3]);
    assert_eq!(detect_intersection(&[1.0, 0.0, 0.5, 0.5], 0.5), Vec::<usize>::new());
    assert_eq!(detect_intersection(&[], 0.5), Vec::<usize>::new());
}

#[test]
fn closed_box_fills_exactly_its_interior() {
    let og = box_shell(12, false);
    let cells = select_fill_cells(&og, &FillConfig::default()).unwrap();
    assert_eq!(cells.len(), 6 * 6 * 6);
    assert!(cells.iter().all(|c| c.iter().all(|&v| (3..9).contains(&v))));
}

#[test]
fn open_box_is_not_filled() {
    let og = box_shell(12, true);
    assert!(select_fill_cells(&og, &FillConfig::default()).unwrap().is_empty());
}

#[test]
fn overflow_is_reported() {
    let og = box_shell(12, false);
    let cfg = FillConfig {
        max_fill: 100,
        ..FillConfig::default()
    };
    assert!(matches!(
        select_fill_cells(&og, &cfg),
        Err(SimError::FillOverflow { count: 1728, cap: 100 })
    ));
}

#[test]
fn spawned_kernels_sit_in_their_cells_and_depend_only_on_the_seed() {
    let og = box_shell(10, false);
    let cells = select_fill_cells(&og, &FillConfig::default()).unwrap();
    let source = GaussianCloud::new(sphere_shell_kernels(Vec3::repeat(5.0), 3.0, 0.5, 0.7), 0).unwrap();
    let cfg = FillConfig {
        particles_per_cell: 5,
        seed: 9,
        ..FillConfig::default()
    };
    let spawned = spawn_fill_particles(&cells, &og, &source, &cfg).unwrap();
    assert_eq!(spawned.len(), cells.len() * 5);
    let radius = fill_radius(1.0 / 5.0);
    for (n, k) in spawned.iter().enumerate() {
        let c = cells[n / 5];
        let lo = og.cell_center(c) - Vec3::repeat(0.5);
        assert!((0..3).all(|d| k.center[d] >= lo[d] && k.center[d] < lo[d] + 1.0));
        assert_eq!(k.scale, Vec3::repeat(radius));
        assert_eq!(k.opacity, 0.7);
    }
    assert_eq!(spawn_fill_particles(&cells, &og, &source, &cfg).unwrap(), spawned);
    let other = FillConfig { seed: 10, ..cfg };
    assert_ne!(spawn_fill_particles(&cells, &og, &source, &other).unwrap(), spawned);
}

#[test]
fn fill_radius_matches_sphere_volume() {
    let r = fill_radius(2.0);
    assert!((4.0 / 3.0 * std::f64::consts::PI * r.powi(3) - 2.0).abs() < 1e-12);
}

#[test]
fn hollow_sphere_is_filled_inside_only() {
    let n = 32;
    let dx = 2.0 / n as f64;
    let grid = EulerianGrid::new(Vec3::repeat(-2.0 * dx), dx, [n + 5; 3]).unwrap();
    let center = Vec3::repeat(1.0);
    let shell = sphere_shell_kernels(center, 0.6, 0.04, 0.9);
    let cloud = GaussianCloud::new(shell, 0).unwrap();
    let filled = fill_kernels(&cloud, &grid, &FillConfig::default()).unwrap();
    assert!(!filled.is_empty());
    assert!(filled.iter().all(|k| (k.center - center).norm() < 0.6));
    // interior volume is covered: roughly ppc kernels per cell of the inner ball
    let cells = filled.len() as f64 / 8.0;
    let ball = 4.0 / 3.0 * std::f64::consts::PI * 0.6f64.powi(3) / dx.powi(3);
    assert!(cells > 0.6 * ball && cells < ball, "{cells} of {ball}");
    assert!(matches!(
        fill_kernels(&GaussianCloud::new(vec![], 0).unwrap(), &grid, &FillConfig::default()),
        Ok(v) if v.is_empty()
    ));
}

proptest! {
    #[test]
    fn selection_matches_the_rule(seed in 0u64..2_000) {
        let og = random_field(seed, [7, 6, 8]);
        let cfg = FillConfig::default();
        prop_assert_eq!(select_fill_cells(&og, &cfg).unwrap(), brute_force_selection(&og, cfg.sigma_th));
    }

    #[test]
    fn nearest_matches_brute_force(seed in 0u64..2_000) {
        let mut rng = rng(seed);
        let kernels: Vec<_> = (0..50).map(|_| random_kernel(&mut rng, 0)).collect();
        let cloud = GaussianCloud::new(kernels, 0).unwrap();
        let index = NearestKernel::new(&cloud).unwrap();
        for _ in 0..20 {
            let x = random_vec(&mut rng, -2.0, 2.0);
            let best = (0..cloud.len())
                .min_by(|&a, &b| {
                    let da = (cloud.kernels[a].center - x).norm_squared();
                    let db = (cloud.kernels[b].center - x).norm_squared();
                    da.total_cmp(&db).then(a.cmp(&b))
                })
                .unwrap();
            prop_assert_eq!(index.query(&x), best);
        }
    }
}
