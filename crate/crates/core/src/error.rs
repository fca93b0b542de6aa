use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("ply parse error: {0}")]
    PlyParse(String),

    #[error("non-finite value in field `{field}` of element {index}")]
    PlyData { index: usize, field: String },

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("degenerate deformation (det = {det:e}){}", particle_suffix(*.particle))]
    DegenerateDeformation { det: f64, particle: Option<usize> },

    #[error("particles outside the simulation domain: {}", format_indices(.indices))]
    OutOfDomain { indices: Vec<usize> },

    #[error(
        "numerical blowup at step {step}: particle {particle} has non-finite or exploding state; \
         try a smaller dt (current {dt:e})"
    )]
    NumericalBlowup { step: u64, particle: usize, dt: f64 },

    #[error("timestep too large: {0}")]
    Timestep(String),

    #[error("fill selected {count} cells, exceeding max_fill = {cap}; raise the opacity threshold")]
    FillOverflow { count: usize, cap: usize },

    #[error("empty cloud: {0}")]
    EmptyCloud(String),

    #[error("structural mismatch: {0}")]
    StructuralDiff(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
}

impl SimError {
    /// Attach a particle index to a degenerate-deformation error.
    pub fn at_particle(self, index: usize) -> Self {
        match self {
            SimError::DegenerateDeformation { det, .. } => SimError::DegenerateDeformation {
                det,
                particle: Some(index),
            },
            other => other,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

fn particle_suffix(particle: Option<usize>) -> String {
    match particle {
        Some(p) => format!(" at particle {p}"),
        None => String::new(),
    }
}

fn format_indices(indices: &[usize]) -> String {
    const SHOWN: usize = 16;
    let head: Vec<String> = indices.iter().take(SHOWN).map(|i| i.to_string()).collect();
    if indices.len() > SHOWN {
        format!("[{}, ... ({} total)]", head.join(", "), indices.len())
    } else {
        format!("[{}]", head.join(", "))
    }
}
