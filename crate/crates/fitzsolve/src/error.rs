use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("resolvent iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("initial point lies at distance {distance:e} from the closed domain")]
    OutsideDomain { distance: f64 },

    #[error("no closed form for {0}; a sampling budget is required")]
    SamplingRequired(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("homogeneous path gap requires a normal-cone operator")]
    NotACone,

    #[error("candidate violates its constraint: {0}")]
    Constraint(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("per-node fixed point diverged at level {level}, node {node}")]
    NodeDivergence { level: usize, node: usize },

    #[error("iteration budget exhausted with objective {objective:e}")]
    Budget { objective: f64 },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
