use thiserror::Error;

use crate::expr::{EvalError, ParseError};
use crate::problem::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("evaluating {what} at t={t}, x={x:?} failed: {source}")]
    Eval {
        what: &'static str,
        t: f64,
        x: Vec<f64>,
        #[source]
        source: EvalError,
    },

    #[error("sigma is singular at t={t}, x={x:?} (condition estimate {condition:e})")]
    SingularSigma { t: f64, x: Vec<f64>, condition: f64 },

    #[error("unknown builtin problem `{0}`")]
    UnknownBuiltin(String),

    #[error("builtin `{family}` requires parameter `{key}`")]
    MissingParam { family: String, key: String },

    #[error("parameter `{key}`: {reason}")]
    InvalidParam { key: String, reason: String },

    #[error("problem failed validation:\n{0}")]
    Validation(Box<ValidationReport>),

    #[error("{what} supports dimension {allowed}, got {dim}")]
    Dimension {
        what: &'static str,
        dim: usize,
        allowed: &'static str,
    },

    #[error("CFL condition violated at step {step}, node {node}: ratio {ratio:.4} > 1")]
    Cfl { step: usize, node: usize, ratio: f64 },

    #[error("non-finite value produced at step {step}, node {node}")]
    NonFinite { step: usize, node: usize },

    #[error("scheme is not monotone: {0}")]
    NotMonotone(String),

    #[error("regression is singular at node {node} (condition {condition:e})")]
    SingularRegression { node: usize, condition: f64 },

    #[error("path batch does not match the problem: {0}")]
    BatchMismatch(String),

    #[error("path batch carries no control record")]
    MissingControls,

    #[error("control {0:?} is not in the control set")]
    UnknownControl(Vec<f64>),

    #[error("policy lookup failed: {0}")]
    Policy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
