use thiserror::Error;

use crate::expr::{EvalError, ParseError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{context}: {source}")]
    Parse { context: String, source: ParseError },

    #[error("{context}: {source}")]
    Eval { context: String, source: EvalError },

    #[error("metric is not positive definite at q = {at:?}: Cholesky pivot {pivot} is {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64, at: Vec<f64> },

    #[error("Jacobi conformal factor E0 - V = {value:e} is not positive at q = {at:?}")]
    JacobiFactor { value: f64, at: Vec<f64> },

    #[error("rank deficiency in {what} at q = {at:?}")]
    RankDeficient { what: String, at: Vec<f64> },

    #[error("singular {what} at q = {at:?}")]
    Singular { what: String, at: Vec<f64> },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },

    #[error("invalid initial state: {0}")]
    InvalidState(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("integration failed at t = {t}: {message}")]
    Step { t: f64, message: String },
}

impl Error {
    pub(crate) fn eval(context: impl Into<String>, source: EvalError) -> Self {
        Error::Eval { context: context.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
