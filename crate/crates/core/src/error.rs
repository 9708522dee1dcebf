use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by frontends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Argument,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {location}: {message}")]
    Format {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),

    #[error("mesh is empty after {0}")]
    EmptyMesh(&'static str),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {what}: expected {expected}, found {found}")]
    Shape {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("mesh is disconnected (component sizes {sizes:?}); geodesic distances are infinite")]
    Disconnected { sizes: Vec<usize> },

    #[error("eigensolver did not converge after {iterations} iterations (worst residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The objective became non-finite and could not be recovered; carries
    /// the last iterate with a finite objective (for a functional map, C flattened column-major).
    #[error("objective became non-finite at iteration {iteration}")]
    NonFiniteObjective { iteration: usize, last_valid: Vec<f64> },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Argument(_) => ErrorKind::Argument,
            Error::Shape { .. }
            | Error::Format { .. }
            | Error::UnsupportedTopology(_)
            | Error::EmptyMesh(_)
            | Error::Data(_)
            | Error::Disconnected { .. }
            | Error::Io { .. } => ErrorKind::Data,
            Error::DegenerateGeometry(_)
            | Error::NonConvergence { .. }
            | Error::DegenerateSpectrum(_)
            | Error::Numeric(_)
            | Error::NonFiniteObjective { .. } => ErrorKind::Numeric,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}
