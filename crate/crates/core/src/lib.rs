//! # dsm-core
//!
//! Solvers for nonlinear operator equations `F(u) = f` in `R^n` based on the
//! dynamical systems method (DSM): instead of iterating, follow an ODE whose
//! trajectory converges to a solution as `t -> infinity`.
//!
//! Two flows are provided:
//!
//! - **Continuous Newton flow** ([`solvers::solve_newton_dsm`]):
//!   `du/dt = -[F'(u)]^{-1} (F(u) - f)`. Along the exact flow the residual
//!   `v(t) = F(u(t)) - f` satisfies `v(t) = v(0) e^{-t}`, so the residual
//!   decays at unit rate regardless of `F`. An explicit Euler step of size 1
//!   on this flow is the classical Newton iteration.
//! - **Regularized Newton flow** ([`solvers::solve_regularized_dsm`]):
//!   `du/dt = -[F'(u) + a(t) I]^{-1} (F(u) + a(t) u - f)` with a positive,
//!   decreasing regularization schedule `a(t) -> 0`. For monotone `F` with a
//!   solvable equation the trajectory converges to the minimal-norm solution,
//!   tracking the stationary path `w(a)` solving `F(w) + a w = f`.
//!
//! The [`diagnostics`] module turns the method's structural guarantees
//! (exact residual decay, the tracking bound `||u - w|| <= ||v||/a`, the
//! inverse bound `||(F'+aI)^{-1}|| <= 1/a`, ratio decay `||v||/a -> 0`) into
//! machine-checkable certificates over recorded trajectories, and the
//! [`corpus`] module ships fixture problems exercising each hypothesis
//! regime, including a monotone operator without solutions whose divergent
//! flow the integrator detects.

pub mod corpus;
pub mod diagnostics;
pub mod error;
pub mod integrator;
pub mod linalg;
pub mod problem;
pub mod schedule;
pub mod solvers;
pub mod stationary;

pub use error::Error;
pub use integrator::{IntegratorConfig, StopReason, Trajectory, TrajectorySample};
pub use problem::{Matrix, OperatorProblem, ProblemMetadata, Vector};
pub use schedule::RegularizationSchedule;
pub use solvers::SolveReport;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
