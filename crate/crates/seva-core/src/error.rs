//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed case or config text.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Structurally invalid input (disconnected graph, duplicate ids, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Argument outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Dimension mismatch between related quantities.
    #[error("shape error: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    /// Unknown bus or branch referenced by a measurement location.
    #[error("lookup error: {0}")]
    Lookup(String),

    /// Newton power flow failed to reach the mismatch tolerance.
    #[error("power flow did not converge in {iterations} iterations (last mismatch {last_mismatch:.3e})")]
    PowerFlowConvergence {
        iterations: usize,
        last_mismatch: f64,
    },

    /// Power-flow Jacobian became singular.
    #[error("power flow Jacobian singular at iteration {iteration}")]
    PowerFlowSingular { iteration: usize },

    /// State estimator failed to reach the KKT residual tolerance.
    #[error("estimation did not converge in {iterations} iterations (residual history tail: {:?})", residual_history.iter().rev().take(4).collect::<Vec<_>>())]
    EstimationConvergence {
        iterations: usize,
        residual_history: Vec<f64>,
    },

    /// Constraint gradients linearly dependent at the solution.
    #[error("regularity error: constraint Jacobian rank {rank} < {expected}; dependent constraints: {}", dependent.join(", "))]
    Regularity {
        rank: usize,
        expected: usize,
        dependent: Vec<String>,
    },

    /// Measurement configuration cannot pin down the state.
    #[error("observability error: KKT matrix rank-deficient ({detail})")]
    Observability { detail: String },

    /// Sensitivity assembly requested at a point that is not a KKT point.
    #[error(
        "stale-point error: KKT residual {residual:.3e} exceeds {limit:.3e}; re-run the estimator"
    )]
    StalePoint { residual: f64, limit: f64 },

    /// Bordered KKT matrix singular to working precision.
    #[error("singular KKT system (reciprocal condition estimate {rcond:.3e})")]
    SingularKkt { rcond: f64 },

    /// All objective sensitivities vanish (consistent data), so the
    /// stealth score is undefined; the surrogate mode must be used.
    #[error("degenerate residuals: every |z*dJ/dz| is zero (consistent data); enable the second-order stealth surrogate (CLI: --consistent)")]
    DegenerateResiduals,

    /// Not enough redundancy for the chi-square test.
    #[error("insufficient redundancy: dof = {dof} < 1")]
    InsufficientRedundancy { dof: i64 },

    /// Numerical routine failed (SVD non-convergence and similar).
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
