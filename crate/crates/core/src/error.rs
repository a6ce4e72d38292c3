use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh spec: {0}")]
    InvalidMeshSpec(String),

    #[error("mesh would need {needed} nodes, above the cap of {cap}")]
    NodeCapExceeded { needed: usize, cap: usize },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("point ({x}, {y}) lies outside the mesh")]
    OutsideDomain { x: f64, y: f64 },

    #[error("invalid optical field: {0}")]
    InvalidField(String),

    #[error("invalid phantom geometry: {0}")]
    InvalidPhantom(String),

    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(String),

    #[error("invalid optode layout: {0}")]
    InvalidLayout(String),

    #[error("linear solve failed: {reason} (residual norm {residual:e})")]
    SolverFailure { reason: String, residual: f64 },

    #[error("time stepping unstable at step {step}: solution norm grew by {growth:.3e}x")]
    Unstable { step: usize, growth: f64 },

    #[error("non-positive detected intensity {value:e} for source {source_id}, detector {detector_id}, bin {bin_id}")]
    NonPositiveIntensity {
        source_id: usize,
        detector_id: usize,
        bin_id: usize,
        value: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid TPSF: {0}")]
    InvalidTpsf(String),

    #[error("invalid settings: {0}")]
    InvalidSettings(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
