//! Adaptive explicit Runge-Kutta integration of `du/dt = rhs(t, u)` with
//! event-based stopping, producing [`Trajectory`] records, plus the
//! fixed-step Euler stepper that bridges the continuous Newton flow to the
//! classical Newton iteration.
//!
//! The stepper is the Dormand-Prince 5(4) embedded pair with PI step-size
//! control (safety 0.9, growth clamped at x5, shrink at x0.1). The Newton
//! flow contracts residuals at unit rate, so stiffness is mild and an
//! explicit method suffices at this scale. Steps are shortened to land
//! exactly on requested checkpoint times; recorded checkpoint samples carry
//! the exact requested `t`.

use crate::error::Error;
use crate::problem::{check_finite_vector, Vector};
use crate::Result;
use serde::Serialize;

/// Integrator tolerances, step bounds, horizon, and stopping thresholds.
#[derive(Debug, Clone)]
pub struct IntegratorConfig {
    /// Relative local error tolerance.
    pub rtol: f64,
    /// Absolute local error tolerance.
    pub atol: f64,
    /// Initial step size.
    pub h0: f64,
    /// Smallest step the controller may demand before giving up.
    pub hmin: f64,
    /// Largest step taken.
    pub hmax: f64,
    /// Integration horizon.
    pub t_max: f64,
    /// Stop with [`StopReason::ResidualConverged`] once the recorded
    /// residual norm falls to this value.
    pub residual_stop: f64,
    /// Declare [`StopReason::Diverged`] once `||u(t)||` reaches this value.
    /// Divergence is checked on `||u||`, not the residual: the residual can
    /// keep decaying while the iterate escapes to infinity.
    pub divergence_norm: f64,
    /// Times at which samples are always recorded (strictly increasing,
    /// within `[0, t_max]`).
    pub checkpoint_grid: Vec<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rtol: 1e-9,
            atol: 1e-12,
            h0: 1e-3,
            hmin: 1e-12,
            hmax: 1.0,
            t_max: 10.0,
            residual_stop: 1e-8,
            divergence_norm: 1e8,
            checkpoint_grid: Vec::new(),
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return bad(format!("rtol and atol must be positive, got {} / {}", self.rtol, self.atol));
        }
        if !(self.hmin > 0.0 && self.hmin < self.h0 && self.h0 <= self.hmax) {
            return bad(format!(
                "step bounds must satisfy 0 < hmin < h0 <= hmax, got hmin={} h0={} hmax={}",
                self.hmin, self.h0, self.hmax
            ));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return bad(format!("t_max must be positive and finite, got {}", self.t_max));
        }
        if !(self.residual_stop > 0.0) {
            return bad(format!("residual_stop must be positive, got {}", self.residual_stop));
        }
        if !(self.divergence_norm > 0.0) {
            return bad(format!("divergence_norm must be positive, got {}", self.divergence_norm));
        }
        for w in self.checkpoint_grid.windows(2) {
            if !(w[0] < w[1]) {
                return bad("checkpoint_grid must be strictly increasing".into());
            }
        }
        if let (Some(first), Some(last)) = (self.checkpoint_grid.first(), self.checkpoint_grid.last()) {
            if *first < 0.0 || *last > self.t_max {
                return bad("checkpoint_grid must lie within [0, t_max]".into());
            }
        }
        Ok(())
    }
}

/// Why an integration run stopped. Exactly one reason per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    /// The recorded residual norm reached `residual_stop`.
    ResidualConverged,
    /// `t_max` was reached.
    HorizonReached,
    /// `||u||` reached `divergence_norm`.
    Diverged,
    /// The error controller demanded a step below `hmin` (stiffness or
    /// rhs blow-up).
    StepUnderflow,
    /// The rhs or the sample annotation failed at an accepted state
    /// (singular Jacobian, non-finite operator output).
    LinearSolveFailed,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StopReason::ResidualConverged => "ResidualConverged",
            StopReason::HorizonReached => "HorizonReached",
            StopReason::Diverged => "Diverged",
            StopReason::StepUnderflow => "StepUnderflow",
            StopReason::LinearSolveFailed => "LinearSolveFailed",
        };
        f.write_str(s)
    }
}

/// One recorded state of a flow.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub t: f64,
    pub u: Vector,
    /// Norm of the flow's residual at this state (`||F(u) - f||` for the
    /// Newton flow, `||F(u) + a(t) u - f||` for the regularized flow).
    pub residual_norm: f64,
    /// Regularization value `a(t)`; 0 for the unregularized flow.
    pub a_value: f64,
    /// Size of the accepted step that produced this sample (0 for the
    /// initial sample).
    pub accepted_step: f64,
}

/// Ordered samples of a flow: every accepted step, with guaranteed exact
/// landings on the checkpoint grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    /// Checkpoint times requested for this run (copied from the config).
    pub checkpoints: Vec<f64>,
    /// Absolute tolerance the run used; diagnostics derive eligibility
    /// floors from it.
    pub atol: f64,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectorySample {
        self.samples.last().expect("trajectory has at least the initial sample")
    }

    /// Samples lying exactly on the checkpoint grid, in time order.
    pub fn checkpoint_samples(&self) -> Vec<&TrajectorySample> {
        self.samples
            .iter()
            .filter(|s| self.checkpoints.binary_search_by(|c| c.partial_cmp(&s.t).unwrap()).is_ok())
            .collect()
    }

    /// The sample recorded at exactly time `t`, if the run landed there.
    pub fn sample_at(&self, t: f64) -> Option<&TrajectorySample> {
        self.samples.iter().find(|s| s.t == t)
    }
}

/// Per-sample annotation computed by the flow driver: the residual norm
/// recorded in the trajectory and the current regularization value.
pub struct SampleInfo {
    pub residual_norm: f64,
    pub a_value: f64,
}

/// Integrates `du/dt = rhs(t, u)` from `u0` until one of the configured
/// stopping events fires.
///
/// `annotate` is evaluated at every accepted state to fill the trajectory's
/// residual and regularization columns; its residual feeds the
/// `residual_stop` event. Errors returned by `rhs` at the start of a step or
/// by `annotate` end the run with [`StopReason::LinearSolveFailed`]; errors
/// in trial stages (where the attempted state may be far off the flow) cause
/// a step rejection and retry with a smaller step.
pub fn integrate<R, A>(
    mut rhs: R,
    mut annotate: A,
    u0: &Vector,
    cfg: &IntegratorConfig,
) -> Result<(Trajectory, StopReason)>
where
    R: FnMut(f64, &Vector) -> Result<Vector>,
    A: FnMut(f64, &Vector) -> Result<SampleInfo>,
{
    cfg.validate()?;
    check_finite_vector(u0, "initial state u0")?;

    let mut trajectory = Trajectory {
        samples: Vec::new(),
        checkpoints: cfg.checkpoint_grid.clone(),
        atol: cfg.atol,
    };

    let mut t = 0.0f64;
    let mut u = u0.clone();
    let info = annotate(t, &u)?;
    trajectory.samples.push(TrajectorySample {
        t,
        u: u.clone(),
        residual_norm: info.residual_norm,
        a_value: info.a_value,
        accepted_step: 0.0,
    });
    if info.residual_norm <= cfg.residual_stop {
        return Ok((trajectory, StopReason::ResidualConverged));
    }
    if u.norm() >= cfg.divergence_norm {
        return Ok((trajectory, StopReason::Diverged));
    }

    // Index of the next checkpoint strictly ahead of t.
    let mut next_checkpoint = cfg.checkpoint_grid.iter().position(|&c| c > t).unwrap_or(cfg.checkpoint_grid.len());

    let mut k1 = match rhs(t, &u) {
        Ok(k) => k,
        Err(_) => return Ok((trajectory, StopReason::LinearSolveFailed)),
    };
    let mut h = cfg.h0.min(cfg.t_max);
    let mut err_prev: f64 = 1e-4; // PI controller memory

    loop {
        // Clamp the step to land exactly on the next checkpoint or on t_max.
        let mut target: Option<f64> = None;
        let mut h_step = h;
        if next_checkpoint < cfg.checkpoint_grid.len() {
            let tc = cfg.checkpoint_grid[next_checkpoint];
            if t + h_step >= tc {
                h_step = tc - t;
                target = Some(tc);
            }
        }
        if target.is_none() && t + h_step >= cfg.t_max {
            h_step = cfg.t_max - t;
            target = Some(cfg.t_max);
        }

        let clamped = h_step < h;
        match try_step(&mut rhs, t, &u, &k1, h_step, cfg.rtol, cfg.atol) {
            Ok(StepAttempt { u_new, k_new, error_ratio }) => {
                if error_ratio <= 1.0 {
                    // Accepted.
                    t = match target {
                        Some(tc) => tc,
                        None => t + h_step,
                    };
                    u = u_new;
                    k1 = k_new;

                    let info = match annotate(t, &u) {
                        Ok(i) => i,
                        Err(_) => return Ok((trajectory, StopReason::LinearSolveFailed)),
                    };
                    trajectory.samples.push(TrajectorySample {
                        t,
                        u: u.clone(),
                        residual_norm: info.residual_norm,
                        a_value: info.a_value,
                        accepted_step: h_step,
                    });
                    if Some(t) == cfg.checkpoint_grid.get(next_checkpoint).copied() {
                        next_checkpoint += 1;
                    }

                    if info.residual_norm <= cfg.residual_stop {
                        return Ok((trajectory, StopReason::ResidualConverged));
                    }
                    if u.norm() >= cfg.divergence_norm {
                        return Ok((trajectory, StopReason::Diverged));
                    }
                    if t >= cfg.t_max {
                        return Ok((trajectory, StopReason::HorizonReached));
                    }

                    if !clamped {
                        let fac = (SAFETY * error_ratio.powf(-PI_ALPHA) * err_prev.powf(PI_BETA))
                            .clamp(SHRINK_LIMIT, GROWTH_LIMIT);
                        err_prev = error_ratio.max(1e-4);
                        h = (h_step * fac).min(cfg.hmax);
                        if h < cfg.hmin {
                            return Ok((trajectory, StopReason::StepUnderflow));
                        }
                    }
                    // After a checkpoint-clamped step the controller keeps
                    // its previous recommendation.
                } else {
                    // Rejected: shrink without growth.
                    let fac = (SAFETY * error_ratio.powf(-0.2)).clamp(SHRINK_LIMIT, 1.0);
                    h = h_step * fac;
                    if h < cfg.hmin {
                        return Ok((trajectory, StopReason::StepUnderflow));
                    }
                }
            }
            Err(StageFailure) => {
                h = h_step * 0.5;
                if h < cfg.hmin {
                    return Ok((trajectory, StopReason::StepUnderflow));
                }
            }
        }
    }
}

/// One explicit Euler step `u + h * rhs(t, u)`.
///
/// With `h = 1` on the Newton flow this is exactly the classical Newton
/// update.
pub fn euler_step<R>(mut rhs: R, u: &Vector, t: f64, h: f64) -> Result<Vector>
where
    R: FnMut(f64, &Vector) -> Result<Vector>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("euler step size must be positive, got {h}")));
    }
    let k = rhs(t, u)?;
    Ok(u + k * h)
}

const SAFETY: f64 = 0.9;
const GROWTH_LIMIT: f64 = 5.0;
const SHRINK_LIMIT: f64 = 0.1;
// PI exponents for a 5th-order error estimate.
const PI_ALPHA: f64 = 0.7 / 5.0;
const PI_BETA: f64 = 0.4 / 5.0;

struct StepAttempt {
    u_new: Vector,
    k_new: Vector,
    error_ratio: f64,
}

/// A trial stage failed (rhs error or non-finite trial state); the step is
/// retried with a smaller size, which pulls the trial states back toward the
/// last accepted one.
struct StageFailure;

/// Dormand-Prince 5(4) coefficients.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
/// 5th-order minus embedded 4th-order weights (error estimate).
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn try_step<R>(
    rhs: &mut R,
    t: f64,
    u: &Vector,
    k1: &Vector,
    h: f64,
    rtol: f64,
    atol: f64,
) -> std::result::Result<StepAttempt, StageFailure>
where
    R: FnMut(f64, &Vector) -> Result<Vector>,
{
    let mut k: Vec<Vector> = Vec::with_capacity(7);
    k.push(k1.clone());
    let mut u_new = u.clone();
    for stage in 0..6 {
        let mut y = u.clone();
        for (j, kj) in k.iter().enumerate() {
            let a = A[stage][j];
            if a != 0.0 {
                y.axpy(h * a, kj, 1.0);
            }
        }
        if y.iter().any(|x| !x.is_finite()) {
            return Err(StageFailure);
        }
        let ki = rhs(t + C[stage] * h, &y).map_err(|_| StageFailure)?;
        if stage == 5 {
            // The last stage is evaluated at the 5th-order solution (FSAL):
            // its state is u_new and its slope seeds the next step.
            u_new = y;
        }
        k.push(ki);
    }
    let k_new = k[6].clone();

    let mut err_vec = Vector::zeros(u.len());
    for (j, kj) in k.iter().enumerate() {
        if E[j] != 0.0 {
            err_vec.axpy(h * E[j], kj, 1.0);
        }
    }
    if !u_new.iter().all(|x| x.is_finite()) || !err_vec.iter().all(|x| x.is_finite()) {
        return Err(StageFailure::AtTrialState);
    }
    // local error per step <= rtol * ||u|| + atol
    let tol = (rtol * u.norm().max(u_new.norm()) + atol).max(1e-300);
    let error_ratio = err_vec.norm() / tol;
    Ok(StepAttempt {
        u_new,
        k_new,
        error_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn norm_annotation() -> impl FnMut(f64, &Vector) -> Result<SampleInfo> {
        |_, u| {
            Ok(SampleInfo {
                residual_norm: u.norm(),
                a_value: 0.0,
            })
        }
    }

    fn decay_rhs(_t: f64, u: &Vector) -> Result<Vector> {
        Ok(-u)
    }

    #[test]
    fn exponential_decay_is_integrated_to_1e8() {
        let cfg = IntegratorConfig {
            t_max: 1.0,
            residual_stop: 1e-30,
            ..Default::default()
        };
        let (traj, reason) = integrate(decay_rhs, no_op_annotation(1.0), &dvector![1.0], &cfg).unwrap();
        assert_eq!(reason, StopReason::HorizonReached);
        let last = traj.last();
        assert_eq!(last.t, 1.0);
        assert_abs_diff_eq!(last.u[0], (-1.0f64).exp(), epsilon = 1e-8);
    }

    #[test]
    fn constant_flow_is_exact() {
        let cfg = IntegratorConfig {
            t_max: 10.0,
            residual_stop: 1e-30,
            ..Default::default()
        };
        let rhs = |_: f64, u: &Vector| Ok(Vector::zeros(u.len()));
        let (traj, reason) = integrate(rhs, no_op_annotation(1.0), &dvector![3.0, 4.0], &cfg).unwrap();
        assert_eq!(reason, StopReason::HorizonReached);
        assert_eq!(traj.last().u, dvector![3.0, 4.0]);
    }

    #[test]
    fn forced_decay_matches_closed_form() {
        // u' = -u + e^{-t}, u(0) = 0 has u(t) = t e^{-t}.
        let cfg = IntegratorConfig {
            t_max: 2.0,
            residual_stop: 1e-30,
            ..Default::default()
        };
        let rhs = |t: f64, u: &Vector| Ok(dvector![-u[0] + (-t).exp()]);
        let (traj, reason) = integrate(rhs, no_op_annotation(1.0), &dvector![0.0], &cfg).unwrap();
        assert_eq!(reason, StopReason::HorizonReached);
        assert_abs_diff_eq!(traj.last().u[0], 2.0 * (-2.0f64).exp(), epsilon = 1e-8);
    }

    #[test]
    fn euler_step_examples() {
        let u = euler_step(decay_rhs, &dvector![1.0], 0.0, 1.0).unwrap();
        assert_eq!(u[0], 0.0);
        let u = euler_step(decay_rhs, &dvector![1.0], 0.0, 0.5).unwrap();
        assert_eq!(u[0], 0.5);
    }

    #[test]
    fn tightening_tolerance_reduces_global_error_monotonically() {
        let mut previous = f64::INFINITY;
        for k in 4..=10 {
            let rtol = 10f64.powi(-k);
            let cfg = IntegratorConfig {
                rtol,
                atol: rtol * 1e-3,
                t_max: 1.0,
                residual_stop: 1e-300_f64.max(1e-30),
                ..Default::default()
            };
            let (traj, _) = integrate(decay_rhs, no_op_annotation(1.0), &dvector![1.0], &cfg).unwrap();
            let error = (traj.last().u[0] - (-1.0f64).exp()).abs();
            assert!(
                error < previous,
                "error {error:.3e} at rtol 1e-{k} did not improve on {previous:.3e}"
            );
            previous = error;
        }
    }

    #[test]
    fn identical_inputs_give_identical_trajectories() {
        let cfg = IntegratorConfig {
            t_max: 3.0,
            residual_stop: 1e-30,
            checkpoint_grid: vec![0.5, 1.5, 2.5],
            ..Default::default()
        };
        let run = || {
            let (traj, _) =
                integrate(decay_rhs, no_op_annotation(1.0), &dvector![1.0, -2.0], &cfg).unwrap();
            traj
        };
        let (a, b) = (run(), run());
        assert_eq!(a.samples.len(), b.samples.len());
        for (sa, sb) in a.samples.iter().zip(b.samples.iter()) {
            assert_eq!(sa.t.to_bits(), sb.t.to_bits());
            assert_eq!(sa.u, sb.u);
            assert_eq!(sa.residual_norm.to_bits(), sb.residual_norm.to_bits());
        }
    }

    #[test]
    fn checkpoints_are_hit_exactly() {
        let grid = vec![0.1, 0.25, 1.0, 2.0, 2.718281828459045];
        let cfg = IntegratorConfig {
            t_max: 3.0,
            residual_stop: 1e-30,
            checkpoint_grid: grid.clone(),
            ..Default::default()
        };
        let (traj, _) = integrate(decay_rhs, no_op_annotation(1.0), &dvector![1.0], &cfg).unwrap();
        for c in &grid {
            let sample = traj.sample_at(*c);
            assert!(sample.is_some(), "no sample at checkpoint {c}");
        }
        assert_eq!(traj.checkpoint_samples().len(), grid.len());
    }

    #[test]
    fn divergence_is_detected_on_state_norm() {
        let cfg = IntegratorConfig {
            t_max: 100.0,
            residual_stop: 1e-30,
            divergence_norm: 1e3,
            ..Default::default()
        };
        let rhs = |_: f64, u: &Vector| Ok(u.clone());
        let (traj, reason) = integrate(rhs, no_op_annotation(1.0), &dvector![1.0], &cfg).unwrap();
        assert_eq!(reason, StopReason::Diverged);
        assert!(traj.last().u[0] >= 1e3);
    }

    #[test]
    fn blow_up_ends_in_step_underflow() {
        // u' = u^2 from 1 blows up at t = 1; past the divergence guard the
        // states overflow and the controller collapses the step.
        let cfg = IntegratorConfig {
            t_max: 2.0,
            residual_stop: 1e-30,
            divergence_norm: 1e306,
            ..Default::default()
        };
        let rhs = |_: f64, u: &Vector| Ok(dvector![u[0] * u[0]]);
        let (_, reason) = integrate(rhs, no_op_annotation(1.0), &dvector![1.0], &cfg).unwrap();
        assert!(
            matches!(reason, StopReason::StepUnderflow | StopReason::Diverged),
            "unexpected stop {reason:?}"
        );
    }

    #[test]
    fn residual_stop_fires() {
        let cfg = IntegratorConfig {
            t_max: 50.0,
            residual_stop: 1e-4,
            ..Default::default()
        };
        let annotate = |_: f64, u: &Vector| {
            Ok(SampleInfo {
                residual_norm: u.norm(),
                a_value: 0.0,
            })
        };
        let (traj, reason) = integrate(decay_rhs, annotate, &dvector![1.0], &cfg).unwrap();
        assert_eq!(reason, StopReason::ResidualConverged);
        assert!(traj.last().residual_norm <= 1e-4);
        assert!(traj.last().t < 50.0);
    }

    #[test]
    fn rhs_failure_at_accepted_state_reports_linear_solve_failure() {
        let rhs = |_: f64, _: &Vector| -> Result<Vector> {
            Err(Error::SingularMatrix {
                context: "test".into(),
                rcond: 0.0,
            })
        };
        let cfg = IntegratorConfig {
            residual_stop: 1e-30,
            ..Default::default()
        };
        let (traj, reason) = integrate(rhs, no_op_annotation(1.0), &dvector![1.0], &cfg).unwrap();
        assert_eq!(reason, StopReason::LinearSolveFailed);
        assert_eq!(traj.samples.len(), 1);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = IntegratorConfig {
            hmin: 1.0,
            h0: 0.5,
            ..Default::default()
        };
        let err = integrate(decay_rhs, no_op_annotation(1.0), &dvector![1.0], &cfg).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn unsorted_checkpoints_are_rejected() {
        let cfg = IntegratorConfig {
            checkpoint_grid: vec![2.0, 1.0],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
