use thiserror::Error;

pub type Result<T, E = ReflowError> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum ReflowError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate law: singular interpolant covariance at tau = {tau}")]
    DegenerateLaw { tau: f64 },

    #[error("training diverged at iteration {iteration}: loss = {loss:e}")]
    TrainingDivergence { iteration: usize, loss: f64 },

    #[error("integration blew up at tau = {tau}")]
    BlowUp { tau: f64 },

    #[error("adaptive sampler exceeded the step cap of {cap} steps (tau = {tau})")]
    StepCapExceeded { cap: usize, tau: f64 },

    #[error("CFL violation: {substeps} substeps requested, at least {required} needed")]
    CflViolation { substeps: usize, required: usize },

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("length mismatch: expected {expected} bytes, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ReflowError {
    pub fn class(&self) -> ErrorClass {
        use ReflowError::*;
        match self {
            InvalidGrid(_) | InvalidParameter(_) => ErrorClass::Config,
            NonFinite { .. }
            | ShapeMismatch { .. }
            | EmptyInput(_)
            | CorruptHeader(_)
            | LengthMismatch { .. }
            | Io(_)
            | Json(_) => ErrorClass::Data,
            DegenerateLaw { .. }
            | TrainingDivergence { .. }
            | BlowUp { .. }
            | StepCapExceeded { .. }
            | CflViolation { .. } => ErrorClass::Numeric,
        }
    }
}

pub(crate) fn ensure_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(ReflowError::ShapeMismatch { expected, found })
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> ReflowError {
    ReflowError::InvalidParameter(msg.into())
}
