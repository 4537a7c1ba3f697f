use thiserror::Error;

/// Errors produced anywhere in the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate measure: {0}")]
    DegenerateMeasure(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("index {index} out of range (max {max})")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("non-finite value at step {step}{}", particle.map(|p| format!(" (particle {p})")).unwrap_or_default())]
    NumericOverflow { step: usize, particle: Option<usize> },

    #[error("coefficient validation failed: {0}")]
    Validation(Box<crate::coefficients::ValidationFailure>),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("no convergence after {} iterations (last distance {:?})", distances.len(), distances.last())]
    NonConvergence { distances: Vec<f64> },

    #[error("localization levels exhausted at node {tau_node} of {n_steps}")]
    LevelExhausted { tau_node: usize, n_steps: usize },

    #[error("tree with {n_steps} steps exceeds the enumeration limit of {max}")]
    TreeTooLarge { n_steps: usize, max: usize },

    #[error("insufficient replications: {got} < {required}")]
    InsufficientReplications { got: usize, required: usize },

    #[error("observation path mismatch: {0}")]
    ObservationMismatch(String),

    #[error("input not converged: {0}")]
    NotConverged(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
