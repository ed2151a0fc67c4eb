//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by problem evaluation, linear algebra, integration and
/// the reference solvers.
///
/// Dynamic run outcomes (divergence, step underflow, a singular Jacobian hit
/// mid-flight) are *not* errors: the flow drivers report them through
/// [`crate::integrator::StopReason`]. `Error` is reserved for precondition
/// violations and failures outside a running flow.
#[derive(Debug, Error)]
pub enum Error {
    /// An input vector or matrix contained NaN or infinite entries.
    #[error("non-finite input: {context}")]
    NonFiniteInput { context: String },

    /// An operator evaluation produced NaN or infinite entries (domain
    /// violation, e.g. overflow in `exp`).
    #[error("non-finite output: {context}")]
    NonFiniteOutput { context: String },

    /// A vector or matrix had the wrong size for the operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    /// The factorization detected (numerical) rank deficiency.
    #[error("singular matrix: {context} (reciprocal condition {rcond:.3e})")]
    SingularMatrix { context: String, rcond: f64 },

    /// Regularization schedule parameters outside their valid ranges.
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    /// Integrator configuration outside its documented valid ranges.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A problem definition failed validation at registration time.
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    /// The damped Newton reference solver hit its iteration cap.
    #[error(
        "stationary solve did not converge at a = {a:.6e} after {iterations} iterations \
         (residual {residual:.3e}); the monotonicity claim may be false or the warm start too far"
    )]
    NoConvergence {
        a: f64,
        iterations: usize,
        residual: f64,
    },

    /// Right-hand side outside the range of a rank-deficient matrix.
    #[error("rhs not in the range of the matrix: component norm {outside_norm:.3e} exceeds {tol:.1e}")]
    NotInRange { outside_norm: f64, tol: f64 },

    /// Lookup of a corpus problem by an unregistered name.
    #[error("unknown problem {name:?}; run `list` for registered names")]
    UnknownProblem { name: String },

    /// A trajectory diagnostic had too few usable checkpoints.
    #[error("insufficient samples for {check}: needed {needed}, got {got}")]
    InsufficientSamples {
        check: String,
        needed: usize,
        got: usize,
    },
}

impl Error {
    pub(crate) fn non_finite_input(context: impl Into<String>) -> Self {
        Error::NonFiniteInput {
            context: context.into(),
        }
    }

    pub(crate) fn non_finite_output(context: impl Into<String>) -> Self {
        Error::NonFiniteOutput {
            context: context.into(),
        }
    }
}
