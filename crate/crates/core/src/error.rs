use thiserror::Error;

/// Errors raised by the simulator library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("duplicate factor name `{0}`")]
    DuplicateFactor(String),
    #[error("unknown factor `{0}`")]
    UnknownFactor(String),
    #[error("empty Hilbert space composition")]
    EmptySpace,
    #[error("Hilbert space mismatch: {0}")]
    SpaceMismatch(String),
    #[error("projectors do not resolve the identity (deviation {0:.3e})")]
    IncompleteProjectors(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("state not normalized: |a|^2 + |b|^2 = {0}")]
    NotNormalized(f64),
    #[error("drive pulse not off at the grid boundary: {0}")]
    BoundaryViolation(String),
    #[error("photon mode too weak to normalize (emission probability {0:.3e})")]
    NearZeroMode(f64),
    #[error("time grids differ")]
    GridMismatch,
    #[error("stability guard violated at t = {time}: dt*||H|| = {value:.4}")]
    StabilityGuard { time: f64, value: f64 },
    #[error("norm increased during no-jump evolution at t = {0}")]
    NormIncrease(f64),
    #[error("invalid density operator: {0}")]
    InvalidDensity(String),
    #[error("overlap {0} outside [-1, 1]")]
    QuadratureFault(f64),
    #[error("unknown detector id {0}")]
    UnknownDetector(u8),
    #[error("photon number {0} not supported")]
    PhotonNumber(usize),
    #[error("Bell measurement contract violated: {0}")]
    Contract(String),
    #[error("csv output: {0}")]
    Csv(String),
}

impl Error {
    /// True for failures of a numerical guard (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::StabilityGuard { .. }
                | Error::NormIncrease(_)
                | Error::QuadratureFault(_)
                | Error::Contract(_)
                | Error::InvalidDensity(_)
        )
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
