use thiserror::Error;

/// Errors raised by the library. Variants are grouped so the CLI can map them
/// onto exit codes (configuration, solver, I/O).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension N={0} is too small")]
    DimensionTooSmall(usize),
    #[error("exponents are off the critical hyperbola (signed defect {defect:e})")]
    OffHyperbola { defect: f64 },
    #[error("exponent ordering violated: need p <= {crit} <= q, got p={p}, q={q}")]
    OrderingViolated { p: f64, q: f64, crit: f64 },
    #[error("exponent out of admissible range: {0}")]
    ExponentOutOfRange(String),
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no sign-change bracket found for the shooting parameter")]
    NoBracket,
    #[error("tolerance {tol:e} not reached (achieved {achieved:e})")]
    ToleranceNotReached { tol: f64, achieved: f64 },
    #[error("tail too short for stable extrapolation: {0}")]
    TailTooShort(String),
    #[error("operation requires the super decay case")]
    NotSuperCase,
    #[error("empty field")]
    EmptyField,
    #[error("sample set is not closed under the symmetry group: {0}")]
    NotGroupClosed(String),
    #[error("non-finite integrand at {0}")]
    NonFinite(String),
    #[error("missing gradient data")]
    MissingGradient,
    #[error("fitted slope {slope} outside tolerance of {expected}")]
    SlopeOutOfTolerance { slope: f64, expected: f64 },
    #[error("no stationary point in the search rectangle")]
    NoStationaryPoint,
    #[error("augmented system is singular (smallest singular value {sigma_min:e})")]
    SingularSystem { sigma_min: f64 },
    #[error("iteration diverged: {0}")]
    Divergence(String),
    #[error("contraction factor {factor} is not below one")]
    NotContracting { factor: f64 },
    #[error("maximum iterations ({0}) reached")]
    MaxIterations(usize),
    #[error("quadrature did not converge: {0}")]
    QuadratureNotConverged(String),
    #[error("insufficient decay of the source field: {0}")]
    InsufficientDecay(String),
    #[error("grid too small: {0}")]
    GridTooSmall(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    /// Broad category of the error.
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            DimensionTooSmall(_)
            | OffHyperbola { .. }
            | OrderingViolated { .. }
            | ExponentOutOfRange(_)
            | InvalidPotential(_)
            | InvalidArgument(_) => ErrorKind::Config,
            Io(_) | Format(_) => ErrorKind::Io,
            _ => ErrorKind::Solver,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Solver,
    Io,
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
