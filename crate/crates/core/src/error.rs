use thiserror::Error;

/// Errors raised by the algebra, lattice, and flow layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("multi-index {0:?} is not a strictly increasing subset of 0..7")]
    InvalidMultiIndex(Vec<usize>),
    #[error("form degree {0} is outside 0..=7")]
    DegreeOutOfRange(usize),
    #[error("degree-{degree} form needs {expected} coefficients, got {found}")]
    CoefficientCount {
        degree: usize,
        expected: usize,
        found: usize,
    },
    #[error("wedge of degrees {left} and {right} exceeds 7")]
    DegreeOverflow { left: usize, right: usize },
    #[error("{0}")]
    DegreeUnderflow(&'static str),
    #[error("degree mismatch: {left} vs {right}")]
    DegreeMismatch { left: usize, right: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("3-form is not positive: {0}")]
    NotPositive(String),
    #[error("metric condition number {0:.3e} exceeds the 1e8 limit")]
    IllConditioned(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("{0}")]
    InvalidInput(String),
    #[error("snapshot format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
