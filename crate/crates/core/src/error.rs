use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("cooperativity undefined: gamma_par/2 + gamma_star is zero")]
    DivisionByZero,

    #[error("steady-state system is numerically singular (relative residual {residual:.3e})")]
    SolverSingular { residual: f64 },

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("intensity {intensity:.3e} is below the floor {floor:.1e}")]
    ZeroIntensity { intensity: f64, floor: f64 },

    #[error("tau spacing {spacing_ps:.3} ps exceeds a quarter of the {fwhm_ps} ps jitter FWHM")]
    GridTooCoarse { spacing_ps: f64, fwhm_ps: f64 },

    #[error("no interior transmission minimum found: {0}")]
    NotFound(String),

    #[error("forward model failed on {failed} of {total} evaluations")]
    ForwardModelFailure { failed: usize, total: usize },

    #[error("non-finite value in dataset: {0}")]
    NonFinite(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter { .. }
            | Error::DimensionMismatch { .. }
            | Error::DivisionByZero
            | Error::InvalidDataset(_)
            | Error::NonFinite(_)
            | Error::Config(_) => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }
}
