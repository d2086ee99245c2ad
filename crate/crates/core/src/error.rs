use thiserror::Error;

use crate::types::ModelKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("noise scale sigma2 must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("degrees of freedom must be positive, got {0}")]
    NonPositiveDof(f64),

    #[error("projection matrix is rank deficient (smallest singular value {0:e})")]
    RankDeficient(f64),

    #[error("parameters violate the {kind:?} constraints: {reason}")]
    KindConstraint { kind: ModelKind, reason: String },

    #[error("argument outside its domain: {0}")]
    Domain(String),

    #[error("non-finite integrand at node (s_eps = {s_eps}, s_x = {s_x})")]
    NonFiniteIntegrand { s_eps: f64, s_x: f64 },

    #[error("row {row} has zero marginal density under the current parameters")]
    ZeroDensity { row: usize },

    #[error("row {0} has no observed entries")]
    EmptyRow(usize),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("log-likelihood decreased from {previous} to {current} at iteration {iteration}")]
    NonMonotone {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
