//! Dense linear solves `J x = b` and regularized solves `(J + aI) x = b`,
//! plus the conditioning probes used by diagnostics.
//!
//! Solves use LU with partial pivoting and a 1-norm reciprocal-condition
//! estimate computed from the factors (Hager/Higham estimator). The SVD is
//! used only inside [`operator_norm_of_inverse`], which is diagnostic-only
//! and off the integrator's hot path.

use crate::error::Error;
use crate::problem::{check_finite_matrix, check_finite_vector, Matrix, Vector};
use crate::Result;
use nalgebra::linalg::LU;
use nalgebra::Dyn;

/// Reciprocal-condition threshold below which a factorization is treated as
/// rank deficient. Conservative for f64; near-singularity must fail loudly
/// rather than silently regularize.
pub const RCOND_SINGULAR_THRESHOLD: f64 = 1e-14;

/// Result of a dense linear solve.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub solution: Vector,
    /// Reciprocal 1-norm condition estimate from the factorization.
    pub condition_estimate: f64,
}

/// Solves `J x = b`.
///
/// Fails with [`Error::SingularMatrix`] when the factorization detects rank
/// deficiency (reciprocal condition below [`RCOND_SINGULAR_THRESHOLD`]),
/// signalling that the bounded-inverse assumption on `F'(u)` is violated at
/// the current iterate.
pub fn solve(j: &Matrix, b: &Vector) -> Result<SolveOutcome> {
    solve_impl(j, b, "J is rank deficient")
}

/// Solves `(J + aI) x = b` for `a > 0`.
///
/// Under the monotonicity claim `J + aI` is always invertible, so a singular
/// factorization here means the claim is false; the error says so.
pub fn solve_regularized(j: &Matrix, a: f64, b: &Vector) -> Result<SolveOutcome> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "regularization value a must be positive and finite, got {a}"
        )));
    }
    let regularized = shifted(j, a);
    solve_impl(
        &regularized,
        b,
        "J + aI is singular despite a > 0: the monotonicity claim is violated",
    )
}

/// Spectral norm of `(J + aI)^{-1}`, i.e. the reciprocal of the smallest
/// singular value of `J + aI`. For monotone `J` this is bounded by `1/a`;
/// [`crate::diagnostics::check_inverse_bound`] measures it against that
/// bound.
pub fn operator_norm_of_inverse(j: &Matrix, a: f64) -> Result<f64> {
    if a < 0.0 || !a.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "shift a must be nonnegative and finite, got {a}"
        )));
    }
    check_square(j)?;
    check_finite_matrix(j, "matrix input")?;
    let shifted = shifted(j, a);
    let singular_values = shifted.singular_values();
    let s_max = singular_values.iter().cloned().fold(0.0f64, f64::max);
    let s_min = singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if s_max == 0.0 || s_min <= RCOND_SINGULAR_THRESHOLD * s_max {
        return Err(Error::SingularMatrix {
            context: "J + aI is singular".into(),
            rcond: if s_max == 0.0 { 0.0 } else { s_min / s_max },
        });
    }
    Ok(1.0 / s_min)
}

fn shifted(j: &Matrix, a: f64) -> Matrix {
    let mut m = j.clone();
    for i in 0..m.nrows().min(m.ncols()) {
        m[(i, i)] += a;
    }
    m
}

fn check_square(j: &Matrix) -> Result<()> {
    if j.nrows() != j.ncols() {
        return Err(Error::DimensionMismatch {
            context: "matrix must be square".into(),
            expected: j.nrows(),
            got: j.ncols(),
        });
    }
    Ok(())
}

fn solve_impl(m: &Matrix, b: &Vector, singular_context: &str) -> Result<SolveOutcome> {
    check_square(m)?;
    if b.len() != m.nrows() {
        return Err(Error::DimensionMismatch {
            context: "rhs of linear solve".into(),
            expected: m.nrows(),
            got: b.len(),
        });
    }
    check_finite_matrix(m, "matrix input")?;
    check_finite_vector(b, "rhs of linear solve")?;

    let lu = m.clone().lu();
    let rcond = reciprocal_condition_1norm(m, &lu);
    if rcond < RCOND_SINGULAR_THRESHOLD {
        return Err(Error::SingularMatrix {
            context: singular_context.into(),
            rcond,
        });
    }
    let solution = lu.solve(b).ok_or_else(|| Error::SingularMatrix {
        context: singular_context.into(),
        rcond,
    })?;
    check_finite_vector(&solution, "linear solve output")?;
    Ok(SolveOutcome {
        solution,
        condition_estimate: rcond,
    })
}

/// 1-norm reciprocal condition estimate: `1 / (||A||_1 * est(||A^{-1}||_1))`
/// with the inverse norm estimated by the Hager/Higham power iteration on
/// the existing factors.
fn reciprocal_condition_1norm(m: &Matrix, lu: &LU<f64, Dyn, Dyn>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let norm_a = one_norm(m);
    if norm_a == 0.0 {
        return 0.0;
    }
    let inv_norm = match estimate_inverse_1norm(lu, n) {
        Some(est) if est > 0.0 => est,
        Some(_) => return 1.0, // A^{-1} estimated as 0: treat as perfectly conditioned
        None => return 0.0,    // exact zero pivot
    };
    1.0 / (norm_a * inv_norm)
}

fn one_norm(m: &Matrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn estimate_inverse_1norm(lu: &LU<f64, Dyn, Dyn>, n: usize) -> Option<f64> {
    let x = Vector::repeat(n, 1.0 / n as f64);
    let mut v = lu.solve(&x)?;
    if n == 1 {
        return Some(v[0].abs() * n as f64);
    }
    let mut gamma = v.iter().map(|x| x.abs()).sum::<f64>();
    let mut xi: Vector = v.map(sign);
    let mut x = solve_transposed(lu, &xi)?;
    for _ in 0..4 {
        let j = x.iamax();
        v = lu.solve(&unit_vector(n, j))?;
        let gamma_prev = gamma;
        gamma = v.iter().map(|x| x.abs()).sum::<f64>();
        let new_xi: Vector = v.map(sign);
        if gamma <= gamma_prev || new_xi == xi {
            break;
        }
        xi = new_xi;
        x = solve_transposed(lu, &xi)?;
    }
    // Alternating probe guards against the iteration stalling on a
    // deceptive starting vector.
    let alt = Vector::from_fn(n, |i, _| {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        s * (1.0 + i as f64 / (n as f64 - 1.0))
    });
    let v_alt = lu.solve(&alt)?;
    let alt_estimate = 2.0 * v_alt.iter().map(|x| x.abs()).sum::<f64>() / (3.0 * n as f64);
    Some(gamma.max(alt_estimate))
}

/// Solves `A^T z = c` reusing the factors of `P A = L U`:
/// `A^T = U^T L^T P`, so solve `U^T y = c`, then `L^T w = y`, then
/// `z = P^{-1} w`.
fn solve_transposed(lu: &LU<f64, Dyn, Dyn>, c: &Vector) -> Option<Vector> {
    let y = lu.u().transpose().solve_lower_triangular(c)?;
    let mut z = lu.l().transpose().solve_upper_triangular(&y)?;
    lu.p().inv_permute_rows(&mut z);
    Some(z)
}

fn unit_vector(n: usize, j: usize) -> Vector {
    let mut e = Vector::zeros(n);
    e[j] = 1.0;
    e
}

fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}
