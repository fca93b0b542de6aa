//! Writes a solid splat cube and a drop-scene config into a directory.
//!
//! ```text
//! cargo run --example make_cube -- demo/
//! cargo run --bin splatsim -- simulate demo/scene.toml
//! ```

use std::path::PathBuf;

use splatsim_core::gs_io::{save_gaussian_ply, GaussianCloud, GaussianKernel};
use splatsim_core::Vec3;

const CONFIG: &str = r#"input = "cube.ply"
seed = 7
anisotropy_r = 4.0

[domain]
region_min = [-1.0, -1.0, -1.0]
region_max = [1.0, 1.0, 1.0]
grid_resolution = 32

[time]
dt = 2e-4
fps = 50
frames = 20

[physics]
gravity = [0.0, 0.0, -9.8]
boundary = "sticky"

[[materials]]
model = "fixed_corotated"
youngs_modulus = 2e4
poisson_ratio = 0.3
density = 1.0

[[velocity]]
velocity = [0.0, 0.0, -1.0]

[output]
dir = "out"
render = true

[[cameras]]
width = 160
height = 120
fx = 140.0
eye = [3.0, -3.0, 1.5]
target = [0.0, 0.0, -0.3]
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo".into()));
    std::fs::create_dir_all(&dir)?;
    let n = 12;
    let h = 0.6 / n as f64;
    let mut kernels = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let c = Vec3::new(i as f64, j as f64, k as f64) * h - Vec3::repeat(0.3 - h / 2.0) + Vec3::new(0.0, 0.0, -0.3);
                let dc = [0.2 + i as f64 / n as f64, 0.8 - 0.5 * j as f64 / n as f64, 0.5];
                kernels.push(GaussianKernel::isotropic(c, 0.6 * h, 0.9, dc));
            }
        }
    }
    save_gaussian_ply(&GaussianCloud::new(kernels, 0)?, dir.join("cube.ply"))?;
    std::fs::write(dir.join("scene.toml"), CONFIG)?;
    println!("wrote {}", dir.display());
    Ok(())
}
