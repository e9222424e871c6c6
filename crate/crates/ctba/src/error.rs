//! Crate-wide error type and result alias.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate scan window: t_b={t_b} t_e={t_e} (interval below 1e-12 s)")]
    DegenerateScanWindow { t_b: f64, t_e: f64 },

    #[error("timestamp {t} outside scan window [{t_b}, {t_e}]")]
    TimestampOutOfWindow { t: f64, t_b: f64, t_e: f64 },

    #[error("unknown scan index {0}")]
    UnknownScan(usize),

    #[error("non-finite coordinate in point ({0}, {1}, {2})")]
    NonFiniteCoordinate(f64, f64, f64),

    #[error("invalid scan data: {0}")]
    InvalidScan(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("scan file format error in {path} at byte {offset}: {what}")]
    ScanFormat {
        path: PathBuf,
        offset: u64,
        what: String,
    },

    #[error("parse error in {path} line {line}: {what}")]
    Parse {
        path: PathBuf,
        line: usize,
        what: String,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no correspondences found: the problem is disconnected")]
    NoCorrespondences,

    #[error("linear solver failed after {attempts} damping escalations (lambda={lambda})")]
    SolverFailure { attempts: usize, lambda: f64 },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("scene generation error: {0}")]
    Scene(String),
}

impl Error {
    /// Process exit code per the CLI contract: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::NoCorrespondences | Error::SolverFailure { .. } => 3,
            _ => 2,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
    Error::Io {
        path: path.into(),
        source,
    }
}
