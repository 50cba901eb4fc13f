use std::path::PathBuf;

/// Errors produced anywhere in the observer workbench.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("degenerate calibration: calib_lo == calib_hi ({0})")]
    DegenerateCalibration(f64),
    #[error("missing complexity model for estimation mode {0}")]
    MissingModel(&'static str),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
