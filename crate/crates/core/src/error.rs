use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid microstructure: {0}")]
    Geometry(String),

    #[error("invalid depth specification: {0}")]
    Depth(String),

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("penalization failure: minimal energy decreased from {previous:.12e} (K = {k_prev:e}) to {current:.12e} (K = {k:e})")]
    NonMonotoneEnergy {
        k_prev: f64,
        k: f64,
        previous: f64,
        current: f64,
    },

    #[error("tensor assembly failure: {0}")]
    Assembly(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid macro state: {0}")]
    MacroState(String),

    #[error("CFL violation: dt * max|U| / dx = {cfl:.3} exceeds {limit}")]
    Cfl { cfl: f64, limit: f64 },

    #[error("non-finite values detected at t = {t}")]
    NonFinite { t: f64 },

    #[error("convergence study failed: {0}")]
    Study(String),

    #[error("field format error: {0}")]
    Format(String),

    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
