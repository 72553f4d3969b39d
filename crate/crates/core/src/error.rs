//! Shared error type. Variants map onto the CLI exit codes: validation and
//! precondition failures exit 1, numeric guards exit 2, I/O exits 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation was called outside its stated domain.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A config or tag failed to parse or validate.
    #[error("invalid configuration: {0}")]
    Validation(String),

    /// A resource or floating-point guard tripped.
    #[error("numeric guard: {0}")]
    NumericGuard(String),

    /// The measure density was negative or otherwise unusable at a node.
    #[error("measure integrity: {0}")]
    MeasureIntegrity(String),

    /// A coefficient denominator underflowed the relative threshold.
    #[error("degenerate measure: coefficient denominator underflow at index {index:?} ({detail})")]
    DegenerateMeasure { index: Vec<usize>, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 validation, 2 numeric guard, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Precondition(_) | Error::Validation(_) => 1,
            Error::NumericGuard(_) | Error::MeasureIntegrity(_) | Error::DegenerateMeasure { .. } => 2,
            Error::Io(_) => 3,
        }
    }
}
