//! Crate-wide error type.

use thiserror::Error;

/// Errors shared across the toolkit.
///
/// Recoverable outcomes of numerical procedures (a flow that exhausts its
/// budget, a certificate that fails a check) are reported through verdict
/// enums on their result types, not through `FpError`. This type covers
/// conditions that make the requested computation ill-posed or impossible.
#[derive(Debug, Error)]
pub enum FpError {
    #[error("expression error: {0}")]
    Expr(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("invalid loop data: {0}")]
    InvalidLoop(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("gradient flow stalled: step size underflow at flow time {flow_time:.6e} (action {action:.6e}, gradient norm {grad_norm:.6e})")]
    FlowStall {
        flow_time: f64,
        action: f64,
        grad_norm: f64,
        /// Trajectory rows up to the stall, for diagnosis.
        record: Box<crate::gradientflow::PSRecord>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("no negative-action loop found below action 0 within budget ({evaluations} action evaluations)")]
    WitnessNotFound { evaluations: usize },

    #[error("minimax value sequence not monotone within tolerance at k = {k:.6}: c = {value:.8} after c = {prev:.8}; refine the discretization")]
    NonMonotoneScan { k: f64, value: f64, prev: f64 },

    #[error("shrinking map inequality violated at radius {radius:.6}: pulled-back Lagrangian exceeds original by {violation:.3e}")]
    ShrinkViolation { radius: f64, violation: f64 },

    #[error("sweep degenerated: longest member length {max_length:.6} fell below half the initial minimax length {initial:.6}; the family no longer spans its class")]
    HomotopyLoss { max_length: f64, initial: f64 },

    #[error("certificate rejected: {0}")]
    Certificate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for FpError {
    fn from(e: serde_json::Error) -> Self {
        FpError::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for FpError {
    fn from(e: toml::de::Error) -> Self {
        FpError::Scenario(e.to_string())
    }
}
