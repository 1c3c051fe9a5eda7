//! Error type shared by every factor operation.
//!
//! Each variant carries a stable machine-readable code (see [`FactorError::code`])
//! so callers can branch on failure kinds without parsing messages.

use thiserror::Error;

/// Error returned by factor construction, algebra, inference and parsing.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FactorError {
    /// A referenced variable is not part of the factor or model.
    #[error("missing variable `{0}`")]
    MissingVariable(String),

    /// The operation is not defined for this representation.
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// No implementation (or single-step promotion) exists for this pair of
    /// representations.
    #[error("unsupported representation pair: {op}({lhs}, {rhs})")]
    UnsupportedPair {
        op: &'static str,
        lhs: &'static str,
        rhs: &'static str,
    },

    /// Two factors disagree about a shared variable's domain.
    #[error("domain mismatch for variable `{0}`")]
    DomainMismatch(String),

    /// A variable required by the operation is not in the factor's scope.
    #[error("variable `{0}` is not in scope")]
    NotInScope(String),

    /// A continuous marginal does not exist (the integrated block is not
    /// positive definite).
    #[error("not integrable: {0}")]
    NotIntegrable(String),

    /// Pointwise division by zero at a point where the numerator is nonzero.
    #[error("division by zero: {0}")]
    DivisionByZero(String),

    /// Operand scopes do not match where identical scopes are required.
    #[error("scope mismatch: {0}")]
    ScopeMismatch(String),

    /// The factor has zero total mass where positive mass is required.
    #[error("zero mass: {0}")]
    ZeroMass(String),

    /// Division by a zero scalar.
    #[error("zero scalar divisor")]
    ZeroScalar,

    /// A matrix or distribution is degenerate beyond recovery.
    #[error("degenerate: {0}")]
    Degenerate(String),

    /// Adaptive quadrature failed to reach the requested tolerance.
    #[error("quadrature did not converge: {0}")]
    QuadratureNonConvergence(String),

    /// An index lies outside the valid range.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// A query contained no variables.
    #[error("empty query")]
    EmptyQuery,

    /// A failure inside a sequential run, tagged with the step index.
    /// [`FactorError::code`] reports the underlying failure's code.
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<FactorError>,
    },

    /// A model or run configuration value is invalid.
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    /// The model document is not syntactically valid.
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },

    /// The model document is syntactically valid but violates the schema.
    #[error("schema error in field `{field}`: {message}")]
    SchemaError { field: String, message: String },
}

impl FactorError {
    /// Stable machine-readable code for this error kind.
    pub fn code(&self) -> &'static str {
        match self {
            FactorError::MissingVariable(_) => "MissingVariable",
            FactorError::Unsupported(_) => "Unsupported",
            FactorError::UnsupportedPair { .. } => "UnsupportedPair",
            FactorError::DomainMismatch(_) => "DomainMismatch",
            FactorError::NotInScope(_) => "NotInScope",
            FactorError::NotIntegrable(_) => "NotIntegrable",
            FactorError::DivisionByZero(_) => "DivisionByZero",
            FactorError::ScopeMismatch(_) => "ScopeMismatch",
            FactorError::ZeroMass(_) => "ZeroMass",
            FactorError::ZeroScalar => "ZeroScalar",
            FactorError::Degenerate(_) => "Degenerate",
            FactorError::QuadratureNonConvergence(_) => "QuadratureNonConvergence",
            FactorError::IndexOutOfRange(_) => "IndexOutOfRange",
            FactorError::EmptyQuery => "EmptyQuery",
            FactorError::AtStep { source, .. } => source.code(),
            FactorError::ConfigInvalid(_) => "ConfigInvalid",
            FactorError::ParseError { .. } => "ParseError",
            FactorError::SchemaError { .. } => "SchemaError",
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, FactorError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_stable() {
        assert_eq!(FactorError::ZeroScalar.code(), "ZeroScalar");
        assert_eq!(
            FactorError::UnsupportedPair {
                op: "multiply",
                lhs: "sample",
                rhs: "sample"
            }
            .code(),
            "UnsupportedPair"
        );
        assert_eq!(
            FactorError::ParseError {
                line: 3,
                column: 7,
                message: "bad token".into()
            }
            .code(),
            "ParseError"
        );
    }

    #[test]
    fn messages_name_the_offender() {
        let e = FactorError::MissingVariable("Rain".into());
        assert!(e.to_string().contains("Rain"));
        let e = FactorError::SchemaError {
            field: "factors[0].scope".into(),
            message: "undeclared variable".into(),
        };
        assert!(e.to_string().contains("factors[0].scope"));
    }
}
