use thiserror::Error;

use crate::gw_tree::VertexId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("offspring distribution is not critical (mean {mean})")]
    NotCritical { mean: f64 },

    #[error("invalid offspring distribution: {0}")]
    InvalidDistribution(String),

    #[error("tree exceeded the vertex cap of {cap}")]
    SizeLimit { cap: usize },

    /// An operation needed the degree or neighbourhood of an unexpanded vertex.
    #[error("vertex {vertex} is on the generation frontier; regenerate with radius >= {required_radius}")]
    FrontierViolation { vertex: VertexId, required_radius: u64 },

    #[error("vertex {0} is not in the tree")]
    UnknownVertex(VertexId),

    #[error("vertex {0} is not in the domain")]
    NotInDomain(VertexId),

    #[error("domain is invalid: {0}")]
    InvalidDomain(String),

    #[error("vertex set of size {size} is too small (need at least {needed})")]
    SetTooSmall { size: usize, needed: usize },

    #[error("dense solver limited to {cap} vertices, got {size}")]
    DenseTooLarge { size: usize, cap: usize },

    #[error("dense oracle failed self-validation: step-halving discrepancy {discrepancy:e}")]
    OracleValidation { discrepancy: f64 },

    #[error("step size underflow at t = {t} (h = {h:e}, {steps} accepted, {rejected} rejected)")]
    StepUnderflow {
        t: f64,
        h: f64,
        steps: u64,
        rejected: u64,
    },

    #[error("negative mass {value:e} at row {row} exceeds tolerance (t = {t})")]
    Negativity { row: usize, value: f64, t: f64 },

    #[error("eigen-solver did not converge after {iterations} restarts (residual {residual:e}; ritz history {history:?})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("hypothesis not satisfied: {0}")]
    Hypothesis(String),

    #[error("variance guard: t * max xi = {value} exceeds {limit}")]
    VarianceGuard { value: f64, limit: f64 },

    #[error("random walk reached frontier vertex {0}")]
    FrontierContact(VertexId),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("resource budget exceeded: {0}")]
    Budget(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
