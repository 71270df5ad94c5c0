use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid mixture: {0}")]
    InvalidSpec(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("non-positive density for species {species} at x index {x}")]
    NonPositiveDensity { species: usize, x: usize },
    #[error("non-positive state: {0}")]
    NonPositiveState(String),
    #[error("conservation constraint system is singular for pair ({0}, {1})")]
    SingularConstraintSystem(usize, usize),
    #[error("equal masses for pair ({0}, {1}): sphere kernel degenerates")]
    EqualMassUnsupported(usize, usize),
    #[error("zero relative velocity: plane kernel is singular at v = v*")]
    ZeroRelativeVelocity,
    #[error("kernel table was built on a different grid")]
    TableGridMismatch,
    #[error("derivative order {order} exceeds field regularity budget {budget}")]
    DimensionOverflow { order: usize, budget: usize },
    #[error("eigen decomposition failed: {0}")]
    EigenFailure(String),
    #[error("Maxwell-Stefan system is singular at x index {0}")]
    SingularMs(usize),
    #[error("positivity lost in species {species} at x index {x}")]
    PositivityLoss { species: usize, x: usize },
    #[error("CFL violation: dt = {dt} exceeds stable bound {bound}")]
    CflViolation { dt: f64, bound: f64 },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("quadratic form is not positive definite: {0}")]
    IndefiniteForm(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
