//! Python bindings: splat I/O, materials, the scene pipeline and the renderer.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use splatsim_core::gs_io;
use splatsim_core::materials::{Material as CoreMaterial, MaterialModel, MaterialParams};
use splatsim_core::mpm::Threading;
use splatsim_core::render::{self, CameraSpec};
use splatsim_core::scene::{self as core_scene, SceneConfig};
use splatsim_core::{Mat3, SimError};

type Rows = [[f64; 3]; 3];

fn to_py(e: SimError) -> PyErr {
    match e {
        SimError::Io { .. } => PyIOError::new_err(e.to_string()),
        SimError::Config { .. } | SimError::Parameter(_) | SimError::PlyData { .. } | SimError::PlyParse(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn mat(rows: Rows) -> Mat3 {
    Mat3::from_fn(|i, j| rows[i][j])
}

fn rows(m: &Mat3) -> Rows {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn threading(reference: bool) -> Threading {
    if reference {
        Threading::Reference
    } else {
        Threading::Parallel
    }
}

/// A set of Gaussian splat kernels.
#[pyclass(name = "GaussianCloud", module = "splatsim")]
struct PyCloud {
    inner: gs_io::GaussianCloud,
}

#[pymethods]
impl PyCloud {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        gs_io::load_gaussian_ply(path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        gs_io::save_gaussian_ply(&self.inner, path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn sh_degree(&self) -> usize {
        self.inner.sh_degree
    }

    /// Centers as a list of `(x, y, z)`.
    #[getter]
    fn centers(&self) -> Vec<[f64; 3]> {
        self.inner.kernels.iter().map(|k| k.center.into()).collect()
    }

    /// Per-axis standard deviations.
    #[getter]
    fn scales(&self) -> Vec<[f64; 3]> {
        self.inner.kernels.iter().map(|k| k.scale.into()).collect()
    }

    /// Quaternions `(w, x, y, z)`.
    #[getter]
    fn rotations(&self) -> Vec<[f64; 4]> {
        let q = |q: &nalgebra::Quaternion<f64>| [q.w, q.i, q.j, q.k];
        self.inner.kernels.iter().map(|k| q(&k.rotation)).collect()
    }

    #[getter]
    fn opacities(&self) -> Vec<f64> {
        self.inner.kernels.iter().map(|k| k.opacity).collect()
    }

    fn covariance(&self, index: usize) -> PyResult<Rows> {
        let k = self
            .inner
            .kernels
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("kernel {index} out of range")))?;
        Ok(rows(&k.covariance()))
    }

    fn anisotropy(&self, r: f64) -> f64 {
        gs_io::anisotropy_metric(&self.inner, r)
    }

    fn clamp_anisotropy(&self, r: f64) -> Self {
        Self {
            inner: gs_io::clamp_anisotropy(&self.inner, r),
        }
    }

    /// Render with a camera given as a dict of camera-spec fields; returns
    /// `(width, height, rgb8_bytes)`.
    fn render<'py>(&self, py: Python<'py>, camera: &Bound<'py, PyDict>) -> PyResult<(usize, usize, Bound<'py, PyBytes>)> {
        let json = py.import("json")?.call_method1("dumps", (camera,))?;
        let spec: CameraSpec =
            serde_json::from_str(&json.extract::<String>()?).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let cam = spec.to_camera().map_err(to_py)?;
        let img = py.detach(|| render::render(&self.inner, &cam));
        Ok((img.width, img.height, PyBytes::new(py, &img.to_rgb8())))
    }

    fn __repr__(&self) -> String {
        format!("GaussianCloud(kernels={}, sh_degree={})", self.inner.len(), self.inner.sh_degree)
    }
}

/// A constitutive model with its parameters.
#[pyclass(name = "Material", module = "splatsim")]
struct PyMaterial {
    inner: CoreMaterial,
}

#[pymethods]
impl PyMaterial {
    /// `friction_angle` is in degrees.
    #[new]
    #[pyo3(signature = (model, youngs_modulus, poisson_ratio, density = 1.0, friction_angle = 0.0, yield_stress = 0.0, viscosity = 0.0))]
    fn new(
        model: &str,
        youngs_modulus: f64,
        poisson_ratio: f64,
        density: f64,
        friction_angle: f64,
        yield_stress: f64,
        viscosity: f64,
    ) -> PyResult<Self> {
        let model = MaterialModel::from_name(model)
            .ok_or_else(|| PyValueError::new_err(format!("unknown material model `{model}`")))?;
        let params = MaterialParams::new(youngs_modulus, poisson_ratio, density)
            .map_err(to_py)?
            .with_friction_angle(friction_angle.to_radians())
            .with_yield_stress(yield_stress)
            .with_viscosity(viscosity);
        CoreMaterial::new(model, params).map(|inner| Self { inner }).map_err(to_py)
    }

    /// `(mu, lambda, kappa)`.
    #[getter]
    fn moduli(&self) -> (f64, f64, f64) {
        let p = &self.inner.params;
        (p.mu, p.lambda, p.kappa)
    }

    fn kirchhoff(&self, f: Rows) -> PyResult<Rows> {
        self.inner.kirchhoff(&mat(f)).map(|m| rows(&m)).map_err(to_py)
    }

    fn energy_density(&self, f: Rows) -> PyResult<f64> {
        self.inner.energy_density(&mat(f)).map_err(to_py)
    }

    fn return_map(&self, f: Rows, dt: f64) -> PyResult<Rows> {
        self.inner.return_map(&mat(f), dt).map(|m| rows(&m)).map_err(to_py)
    }
}

/// A loaded scene ready to step.
#[pyclass(name = "Scene", module = "splatsim")]
struct PyScene {
    inner: core_scene::Scene,
    frame: usize,
}

#[pymethods]
impl PyScene {
    #[new]
    #[pyo3(signature = (config, reference = false))]
    fn new(py: Python<'_>, config: PathBuf, reference: bool) -> PyResult<Self> {
        let inner = py
            .detach(|| SceneConfig::load(&config).and_then(|c| core_scene::Scene::build(c, threading(reference))))
            .map_err(to_py)?;
        Ok(Self { inner, frame: 0 })
    }

    #[getter]
    fn frame(&self) -> usize {
        self.frame
    }

    #[getter]
    fn step_count(&self) -> u64 {
        self.inner.sim.step
    }

    #[getter]
    fn fill_count(&self) -> usize {
        self.inner.fill.len()
    }

    fn advance_frame(&mut self, py: Python<'_>) -> PyResult<()> {
        py.detach(|| self.inner.sim.advance_frame()).map_err(to_py)?;
        self.frame += 1;
        Ok(())
    }

    /// Current kernels in input units.
    fn cloud(&self) -> PyCloud {
        PyCloud {
            inner: self.inner.frame_cloud(),
        }
    }

    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let cloud = self.inner.frame_cloud();
        let d = self.inner.diagnostics(self.frame, &cloud).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("frame", d.frame)?;
        out.set_item("time", d.time)?;
        out.set_item("total_mass", d.total_mass)?;
        out.set_item("momentum", <[f64; 3]>::from(d.momentum))?;
        out.set_item("kinetic_energy", d.kinetic_energy)?;
        out.set_item("elastic_energy", d.elastic_energy)?;
        out.set_item("max_speed", d.max_speed)?;
        out.set_item("cfl_ratio", d.cfl_ratio)?;
        out.set_item("fill_count", d.fill_count)?;
        out.set_item("anisotropy", d.anisotropy)?;
        Ok(out)
    }
}

fn json_value<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Check a config file; returns `{"errors": [...], "warnings": [...]}`.
#[pyfunction]
fn validate(py: Python<'_>, config: PathBuf) -> PyResult<Bound<'_, PyAny>> {
    json_value(py, &core_scene::validate(&config))
}

/// Run the full pipeline; returns a summary dict.
#[pyfunction]
#[pyo3(signature = (config, reference = false))]
fn simulate(py: Python<'_>, config: PathBuf, reference: bool) -> PyResult<Bound<'_, PyDict>> {
    let s = py.detach(|| core_scene::run(&config, threading(reference))).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("frames_written", s.frames_written)?;
    out.set_item("fill_count", s.fill_count)?;
    out.set_item("steps", s.steps)?;
    out.set_item("output_dir", s.output_dir)?;
    Ok(out)
}

/// Write `filled.ply`; returns `(path, fill_count)`.
#[pyfunction]
fn fill(py: Python<'_>, config: PathBuf) -> PyResult<(PathBuf, usize)> {
    py.detach(|| core_scene::fill_preview(&config)).map_err(to_py)
}

/// Per-field max/mean differences of two splat files.
#[pyfunction]
fn diff(py: Python<'_>, a: PathBuf, b: PathBuf) -> PyResult<Bound<'_, PyAny>> {
    let d = core_scene::diff_frames(&a, &b).map_err(to_py)?;
    json_value(py, &d)
}

#[pymodule]
fn splatsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCloud>()?;
    m.add_class::<PyMaterial>()?;
    m.add_class::<PyScene>()?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fill, m)?)?;
    m.add_function(wrap_pyfunction!(diff, m)?)?;
    Ok(())
}
