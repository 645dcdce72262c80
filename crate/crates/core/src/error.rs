use thiserror::Error;

/// Errors raised by evaluators, quadratures and finite-sample engines.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("unsupported dimension: expected p = {expected}, got p = {got}")]
    UnsupportedDimension { expected: usize, got: usize },

    #[error("invalid H-class density: beta shapes ({a}, {b}) must both exceed 3")]
    InvalidHClass { a: f64, b: f64 },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("unsupported model/prior pair: {model} with {prior}")]
    UnsupportedPair { model: String, prior: String },

    #[error("quadrature did not converge after {nodes} nodes (estimates {coarse} and {fine})")]
    NonConvergence { coarse: f64, fine: f64, nodes: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
