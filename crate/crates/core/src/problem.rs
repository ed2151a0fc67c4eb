//! Operator problem model: `F`, its Jacobian, the data `f`, and structural
//! metadata.
//!
//! A problem lives in `R^n` with the Euclidean inner product. The operator
//! and Jacobian are plain closures; everything is immutable after
//! construction and safe to share across threads. All entries crossing a
//! module boundary must be finite — violations are reported as errors, never
//! silently propagated.

use crate::error::Error;
use crate::Result;
use nalgebra::{DMatrix, DVector};

/// Dense real vector in `R^n`.
pub type Vector = DVector<f64>;
/// Dense real `n x n` matrix (row-major semantics at serialization
/// boundaries).
pub type Matrix = DMatrix<f64>;

type OperatorFn = dyn Fn(&Vector) -> Vector + Send + Sync;
type JacobianFn = dyn Fn(&Vector) -> Matrix + Send + Sync;

/// Residual tolerance for registered reference solutions.
pub const REGISTRATION_RESIDUAL_TOL: f64 = 1e-10;

/// Structural claims about an operator. Monotonicity and global invertibility
/// are not decidable by computation; they are trusted claims, spot-checked by
/// the sampling probes in [`crate::diagnostics`].
#[derive(Debug, Clone, Default)]
pub struct ProblemMetadata {
    /// Asserts `(F'(u) v, v) >= 0` for all `u, v`.
    pub claims_monotone: bool,
    /// Asserts `F` is a homeomorphism of `R^n` onto `R^n`.
    pub claims_global_homeomorphism: bool,
    /// A vector `u*` with `F(u*) = f`, when one is known in closed form.
    pub known_solution: Option<Vector>,
    /// The minimal-norm element of the solution set, when known.
    pub known_minimal_norm_solution: Option<Vector>,
    /// Whether preimages of bounded sets under `F` are bounded. When false,
    /// the flow may push `||u||` to infinity while the residual still decays;
    /// divergence detection is the only guard.
    pub satisfies_preimage_bound: bool,
}

/// A nonlinear operator equation `F(u) = f` on `R^n`.
pub struct OperatorProblem {
    dimension: usize,
    operator: Box<OperatorFn>,
    jacobian: Option<Box<JacobianFn>>,
    rhs: Vector,
    metadata: ProblemMetadata,
}

impl std::fmt::Debug for OperatorProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorProblem")
            .field("dimension", &self.dimension)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("metadata", &self.metadata)
            .finish()
    }
}

/// Builder for [`OperatorProblem`]; `build` validates dimensions, finiteness
/// and any registered reference solutions.
pub struct ProblemBuilder {
    dimension: usize,
    operator: Box<OperatorFn>,
    jacobian: Option<Box<JacobianFn>>,
    rhs: Vector,
    metadata: ProblemMetadata,
}

impl ProblemBuilder {
    pub fn jacobian(mut self, jac: impl Fn(&Vector) -> Matrix + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Box::new(jac));
        self
    }

    pub fn metadata(mut self, metadata: ProblemMetadata) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn build(self) -> Result<OperatorProblem> {
        let problem = OperatorProblem {
            dimension: self.dimension,
            operator: self.operator,
            jacobian: self.jacobian,
            rhs: self.rhs,
            metadata: self.metadata,
        };
        if problem.dimension == 0 {
            return Err(Error::InvalidProblem("dimension must be positive".into()));
        }
        if problem.rhs.len() != problem.dimension {
            return Err(Error::DimensionMismatch {
                context: "rhs vector".into(),
                expected: problem.dimension,
                got: problem.rhs.len(),
            });
        }
        check_finite_vector(&problem.rhs, "rhs vector")?;
        // Reference solutions are validated at registration so fixture bugs
        // surface here instead of inside a failing solver run.
        for (label, candidate) in [
            ("known_solution", problem.metadata.known_solution.clone()),
            (
                "known_minimal_norm_solution",
                problem.metadata.known_minimal_norm_solution.clone(),
            ),
        ] {
            if let Some(y) = candidate {
                let r = problem.residual(&y)?;
                let norm = r.norm();
                if norm > REGISTRATION_RESIDUAL_TOL {
                    return Err(Error::InvalidProblem(format!(
                        "{label} has residual norm {norm:.3e} > {REGISTRATION_RESIDUAL_TOL:.1e}"
                    )));
                }
            }
        }
        Ok(problem)
    }
}

impl OperatorProblem {
    /// Starts building a problem from its dimension, operator, and data `f`.
    pub fn builder(
        dimension: usize,
        operator: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        rhs: Vector,
    ) -> ProblemBuilder {
        ProblemBuilder {
            dimension,
            operator: Box::new(operator),
            jacobian: None,
            rhs,
            metadata: ProblemMetadata::default(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn rhs(&self) -> &Vector {
        &self.rhs
    }

    pub fn metadata(&self) -> &ProblemMetadata {
        &self.metadata
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    /// Evaluates `F(u)`, checking finiteness on the way in and out.
    pub fn evaluate(&self, u: &Vector) -> Result<Vector> {
        self.check_dimension(u, "operator argument")?;
        check_finite_vector(u, "operator argument")?;
        let out = (self.operator)(u);
        if out.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                context: "operator output".into(),
                expected: self.dimension,
                got: out.len(),
            });
        }
        check_finite_vector(&out, "operator output F(u)")?;
        Ok(out)
    }

    /// Residual `v = F(u) - f`.
    pub fn residual(&self, u: &Vector) -> Result<Vector> {
        Ok(self.evaluate(u)? - &self.rhs)
    }

    /// Jacobian `F'(u)`: the analytic closure when supplied, otherwise
    /// central finite differences with per-coordinate step
    /// `sqrt(machine_epsilon) * (1 + |u_i|)`.
    pub fn jacobian_at(&self, u: &Vector) -> Result<Matrix> {
        self.check_dimension(u, "jacobian argument")?;
        check_finite_vector(u, "jacobian argument")?;
        match &self.jacobian {
            Some(jac) => {
                let m = jac(u);
                if m.nrows() != self.dimension || m.ncols() != self.dimension {
                    return Err(Error::DimensionMismatch {
                        context: "jacobian output".into(),
                        expected: self.dimension,
                        got: m.nrows().max(m.ncols()),
                    });
                }
                check_finite_matrix(&m, "jacobian F'(u)")?;
                Ok(m)
            }
            None => self.finite_difference_jacobian(u),
        }
    }

    /// Central-difference Jacobian, used both as the fallback when no
    /// analytic Jacobian exists and as the independent reference in
    /// [`OperatorProblem::check_jacobian`].
    pub fn finite_difference_jacobian(&self, u: &Vector) -> Result<Matrix> {
        self.check_dimension(u, "jacobian argument")?;
        check_finite_vector(u, "jacobian argument")?;
        let n = self.dimension;
        let mut jac = Matrix::zeros(n, n);
        let mut probe = u.clone();
        for j in 0..n {
            let h = f64::EPSILON.sqrt() * (1.0 + u[j].abs());
            probe[j] = u[j] + h;
            let forward = self.evaluate(&probe)?;
            probe[j] = u[j] - h;
            let backward = self.evaluate(&probe)?;
            probe[j] = u[j];
            let column = (forward - backward) / (2.0 * h);
            jac.set_column(j, &column);
        }
        Ok(jac)
    }

    /// Compares the analytic Jacobian against central finite differences,
    /// entrywise relative to `1 + |entry|`. Passes iff the worst discrepancy
    /// is at most `tol`.
    pub fn check_jacobian(&self, u: &Vector, tol: f64) -> Result<JacobianCheck> {
        if self.jacobian.is_none() {
            return Err(Error::InvalidProblem(
                "check_jacobian requires an analytic jacobian".into(),
            ));
        }
        let analytic = self.jacobian_at(u)?;
        let numeric = self.finite_difference_jacobian(u)?;
        let mut worst = 0.0f64;
        let mut worst_entry = (0, 0);
        for i in 0..self.dimension {
            for j in 0..self.dimension {
                let denom = 1.0 + analytic[(i, j)].abs();
                let disc = (analytic[(i, j)] - numeric[(i, j)]).abs() / denom;
                if disc > worst {
                    worst = disc;
                    worst_entry = (i, j);
                }
            }
        }
        Ok(JacobianCheck {
            max_relative_discrepancy: worst,
            worst_entry,
            tol,
            passed: worst <= tol,
        })
    }

    fn check_dimension(&self, u: &Vector, context: &str) -> Result<()> {
        if u.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                context: context.into(),
                expected: self.dimension,
                got: u.len(),
            });
        }
        Ok(())
    }
}

/// Outcome of an analytic-vs-finite-difference Jacobian comparison.
#[derive(Debug, Clone)]
pub struct JacobianCheck {
    /// Worst entrywise discrepancy, relative to `1 + |entry|`.
    pub max_relative_discrepancy: f64,
    /// Index of the worst entry.
    pub worst_entry: (usize, usize),
    /// Tolerance the check was run at.
    pub tol: f64,
    pub passed: bool,
}

pub(crate) fn check_finite_vector(v: &Vector, context: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else if v.iter().any(|x| x.is_nan()) {
        Err(Error::non_finite_input(format!("{context} contains NaN")))
    } else {
        Err(Error::non_finite_input(format!(
            "{context} contains infinite entries"
        )))
    }
    .map_err(|e| promote_output_context(e, context))
}

pub(crate) fn check_finite_matrix(m: &Matrix, context: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(promote_output_context(
            Error::non_finite_input(format!("{context} contains non-finite entries")),
            context,
        ))
    }
}

// Outputs of F get NonFiniteOutput (domain violation), everything else stays
// NonFiniteInput.
fn promote_output_context(err: Error, context: &str) -> Error {
    match err {
        Error::NonFiniteInput { context: c }
            if context.contains("output") || context.contains("F'(") || context.contains("F(") =>
        {
            Error::non_finite_output(c)
        }
        other => other,
    }
}
