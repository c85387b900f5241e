use thiserror::Error;

/// Errors raised anywhere in the clustering pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite numeric input: {0}")]
    NumericInput(String),
    #[error("argument {value} outside the domain of {function}")]
    Domain { function: &'static str, value: f64 },
    #[error("matrix is singular or not positive definite: {0}")]
    SingularMatrix(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("component {component} is degenerate: {reason}")]
    DegenerateComponent { component: usize, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model code {code:?}: letter {letter:?} at position {position} is not allowed")]
    InvalidModel {
        code: String,
        position: usize,
        letter: char,
    },
    #[error("invalid model code {0:?}: expected 5 letters")]
    InvalidModelLength(String),
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("infeasible request: {0}")]
    Infeasible(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("fit failed for {model} with G={groups}: {diagnostics}")]
    FitFailed {
        model: String,
        groups: usize,
        diagnostics: String,
    },
    #[error("every grid cell failed ({0} cells)")]
    GridFailed(usize),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("column {column:?} has zero variance")]
    ZeroVariance { column: String },
    #[error("unsupported schema version {found:?} (expected {expected:?})")]
    SchemaVersion { found: String, expected: String },
    #[error("malformed model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the numerical state of a fit rather than by
    /// bad input. A fit that hits one of these is retried from a fresh start.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateComponent { .. }
                | Error::SingularMatrix(_)
                | Error::NumericInput(_)
                | Error::FitFailed { .. }
                | Error::GridFailed(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
