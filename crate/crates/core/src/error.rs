use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid time parameters: {0}")]
    InvalidTime(String),
    #[error("no probability mass to normalize")]
    NoMass,
    #[error("weight at site {site} is negative or not finite ({value})")]
    BadWeight { site: usize, value: f64 },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("distribution is not normalized (sum = {0})")]
    NotNormalized(f64),
    #[error("distributions live on different grids")]
    GridMismatch,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("argument is not finite ({0})")]
    NonFinite(f64),
    #[error("invalid slit geometry: {0}")]
    InvalidGeometry(String),
    #[error("distance behind the diaphragm must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("wavelength must be positive and finite, got {0}")]
    InvalidWavelength(f64),
    #[error("mass balance residual {0:e} exceeds tolerance")]
    MassBalance(f64),
    #[error("oracle instance {n_from}x{n_to} exceeds the 64-cell guard")]
    OracleTooLarge { n_from: usize, n_to: usize },
    #[error("oracle failed: {0}")]
    Oracle(String),
    #[error("Wasserstein order must be >= 1, got {0}")]
    InvalidOrder(f64),
    #[error("stale crossing pair: {0}")]
    StalePair(String),
    #[error("sampled an empty row (step {step}, site {site})")]
    EmptyRow { step: usize, site: usize },
    #[error("final site {0} has zero probability")]
    ZeroProbabilitySite(usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("{op} at line {line}: {source}")]
    AtLine {
        op: &'static str,
        line: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_line(self, op: &'static str, line: usize) -> Self {
        Error::AtLine {
            op,
            line,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
