use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("SNR is undefined: {0}")]
    UndefinedSnr(&'static str),

    #[error("embedding layout error: {0}")]
    Layout(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{what} is numerically singular (smallest pivot {pivot:.3e})")]
    Singular { what: &'static str, pivot: f64 },

    #[error("component {component} collapsed (total responsibility {mass:.3e})")]
    ComponentCollapse { component: usize, mass: f64 },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("gradient flow diverged at step {step} (loss {loss:.6e}); reduce the step size")]
    StepSize { step: usize, loss: f64 },

    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
