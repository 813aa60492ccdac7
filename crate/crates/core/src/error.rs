use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("newton solve did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonFailed { iterations: usize, residual: f64 },

    #[error("time step failed after {halvings} step halvings (h = {h:e} s): {source}")]
    StepFailed {
        halvings: usize,
        h: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("load parameter {alpha} outside tabulated range [{min:e}, {max:e}]")]
    OracleRange { alpha: f64, min: f64, max: f64 },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{}{message}", path.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default())]
    Format {
        path: Option<PathBuf>,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line runner: 3 for non-convergence,
    /// 2 for every configuration or input problem.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NewtonFailed { .. } | Error::StepFailed { .. } => 3,
            _ => 2,
        }
    }
}
