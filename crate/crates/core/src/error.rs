use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("input contains non-finite entries")]
    NonFinite,
    #[error("matrix is not symmetric: |a[{row},{col}] - a[{col},{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("operand dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("sketch weights must be positive; diagonal entry {index} is {value:e}")]
    InvalidWeights { index: usize, value: f64 },
    #[error("sketch rank {rank} is invalid for dimension {n}")]
    InvalidSketchRank { rank: usize, n: usize },
    #[error("sketched Gram matrix is singular")]
    DegenerateSketch,
    #[error("gave up after {0} degenerate sketches")]
    TooManyDegenerateSketches(usize),
    #[error("stepsize omega = {0} must lie in (0, 2)")]
    InvalidStepsize(f64),
    #[error("family parameter s = {0} must be positive")]
    InvalidFamilyParameter(f64),
    #[error("invalid acceleration parameter: {0}")]
    InvalidParameter(String),
    #[error("enumeration needs a finite-support sketch distribution")]
    UnsupportedForEnumeration,
    #[error("expected operator vanishes")]
    DegenerateDistribution,
    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),
    #[error("curvature condition failed (delta'zeta = {0:e})")]
    SkipUpdate(f64),
    #[error("iteration diverged at step {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },
    #[error("no stepsize in the grid produced a finite objective")]
    NoViableStepsize,
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
