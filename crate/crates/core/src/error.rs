use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("model mismatch: expected a {expected} element, found {found}")]
    ModelMismatch { expected: &'static str, found: &'static str },
    #[error("resource limit: {0}")]
    ResourceLimit(String),
    #[error("invalid family: {0}")]
    InvalidFamily(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("point is outside the domain of the partial map")]
    OutsideDomain,
    #[error("index {0} is not an active pair of the schedule")]
    InactiveIndex(usize),
    #[error("configurations are not known to differ in finitely many coordinates")]
    NotHomoclinic,
    #[error("no horizon found within {budget} pairs (best probability {best:.4})")]
    DivergenceTooSlow { budget: usize, best: f64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("degenerate variance")]
    DegenerateVariance,
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl LabError {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::Parse(_) | LabError::InvalidFamily(_) | LabError::ModelMismatch { .. } => 2,
            LabError::ResourceLimit(_) => 3,
            LabError::InvariantViolation(_) => 4,
            LabError::Io(_) => 5,
            _ => 1,
        }
    }
}
