use alloc::string::String;

use thiserror::Error;

/// Errors raised by the audit calculations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    /// Input data violates a structural invariant (counts, ids, sizes).
    #[error("invalid input: {0}")]
    Validation(String),

    /// A tuning parameter is outside its admissible range.
    #[error("parameter `{name}` out of range: {detail}")]
    Parameter { name: &'static str, detail: String },

    /// Some reported winner does not beat some reported loser, so the audit is undefined.
    #[error("reported outcome not well-formed: {winner} does not beat {loser} (margin {margin})")]
    OutcomeNotWellFormed {
        winner: String,
        loser: String,
        margin: i64,
    },

    /// Exact arithmetic exceeded the supported integer range.
    #[error("arithmetic overflow in {0}")]
    Overflow(&'static str),

    /// Audit state machine received an event it cannot apply.
    #[error("audit state error: {0}")]
    State(String),
}

pub type Result<T> = core::result::Result<T, AuditError>;

pub(crate) fn invalid(msg: impl Into<String>) -> AuditError {
    AuditError::Validation(msg.into())
}

pub(crate) fn bad_param(name: &'static str, detail: impl Into<String>) -> AuditError {
    AuditError::Parameter {
        name,
        detail: detail.into(),
    }
}
