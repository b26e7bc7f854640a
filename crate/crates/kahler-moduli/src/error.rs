//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported genus {0}: only the genus-2 octagon preset is available")]
    UnsupportedGenus(usize),
    #[error("refinement level {0} outside [0, 8]")]
    LevelOutOfRange(usize),
    #[error("degenerate triangle {triangle} (area {area:e})")]
    NonEmbeddedMesh { triangle: usize, area: f64 },
    #[error("unsupported degree {0}: only k = 0 is implemented")]
    UnsupportedDegree(i64),
    #[error("unsupported rank {0}")]
    UnsupportedRank(usize),
    #[error("no irreducible representation found after {retries} draws (seed {seed})")]
    MaxRetriesExceeded { seed: u64, retries: usize },
    #[error("kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },
    #[error("singular assembly: {0}")]
    SingularAssembly(String),
    #[error("solver breakdown after {iterations} iterations (relative residual {residual:e})")]
    SolverBreakdown { iterations: usize, residual: f64 },
    #[error("spectral gap undecidable: ratio {ratio:.3e} below 100 (kind {kind})")]
    GapUndecidable { kind: String, ratio: f64 },
    #[error("chart data missing for evaluation away from the base point")]
    MissingChiData,
    #[error("Beltrami coefficient sup-norm {0} violates ellipticity")]
    EllipticityViolated(f64),
    #[error("Neumann series diverged: {iterations} iterations, last increment {last_increment:e}")]
    SeriesDiverged { iterations: usize, last_increment: f64, trace: Vec<f64> },
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("Möbius fit residual {residual:e} exceeds {threshold:e}")]
    FitResidualTooLarge { residual: f64, threshold: f64 },
    #[error("eigen-solver converged only {converged} of {requested} pairs")]
    EigenNotConverged { converged: usize, requested: usize },
    #[error("tail fit unstable: {0}")]
    TailFitUnstable(String),
    #[error("formula type error in term {term}: {message}")]
    FormulaType { term: String, message: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O or format error: {0}")]
    Format(String),
}

impl Error {
    pub fn kind_mismatch(expected: impl std::fmt::Debug, found: impl std::fmt::Debug) -> Self {
        Error::KindMismatch { expected: format!("{expected:?}"), found: format!("{found:?}") }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
