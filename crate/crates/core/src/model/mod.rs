//! Delayed optimal control problem definitions and Hamiltonian machinery.
//!
//! A [`ProblemDef`] bundles the dynamics `f(t, x, y, u, v)` and running cost
//! `f⁰(t, x, y, u, v)`, where `y` is the delayed state and `v` the delayed
//! control, together with the partial derivatives the adjoint equation needs,
//! the closed-form feedback law realizing the Hamiltonian maximization, and
//! the boundary data. All callables must be pure: a problem is shared behind
//! `Arc` between concurrent residual evaluations.

mod builtins;

pub use builtins::{by_name, ocp1, ocp2, BUILTIN_NAMES};

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::traj::DenseTrajectory;

/// Pair of constant delays: `tau1` acts on the state, `tau2` on the control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayPair {
    pub tau1: f64,
    pub tau2: f64,
}

impl DelayPair {
    pub fn new(tau1: f64, tau2: f64) -> Self {
        Self { tau1, tau2 }
    }

    pub const ZERO: DelayPair = DelayPair {
        tau1: 0.0,
        tau2: 0.0,
    };

    pub fn norm(&self) -> f64 {
        self.tau1.hypot(self.tau2)
    }

    pub fn scale(&self, s: f64) -> DelayPair {
        DelayPair::new(s * self.tau1, s * self.tau2)
    }

    pub fn max_component(&self) -> f64 {
        self.tau1.max(self.tau2)
    }
}

impl fmt::Display for DelayPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.tau1, self.tau2)
    }
}

/// Final-time specification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    /// The final time is part of the problem data.
    FixedTime(f64),
    /// The final time is an unknown of the boundary value problem; the
    /// stationarity of the Hamiltonian at the final time closes the system.
    FreeTime { initial_guess: f64 },
}

impl Horizon {
    pub fn initial_time(&self) -> f64 {
        match self {
            Horizon::FixedTime(t) => *t,
            Horizon::FreeTime { initial_guess } => *initial_guess,
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, Horizon::FreeTime { .. })
    }
}

/// Terminal condition on the state.
#[derive(Debug, Clone, PartialEq)]
pub enum Terminal {
    /// No terminal constraint; transversality pins the adjoint final value
    /// to zero.
    FreeEndpoint,
    /// Selected state components are pinned to target values; the matching
    /// adjoint final values become shooting unknowns.
    FixedComponents(Vec<(usize, f64)>),
}

pub type DynamicsFn = Arc<
    dyn Fn(f64, &DVector<f64>, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64>
        + Send
        + Sync,
>;
pub type CostRateFn = Arc<
    dyn Fn(f64, &DVector<f64>, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync,
>;
pub type StateJacobianFn = Arc<
    dyn Fn(f64, &DVector<f64>, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DMatrix<f64>
        + Send
        + Sync,
>;
pub type CostGradientFn = Arc<
    dyn Fn(f64, &DVector<f64>, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64>
        + Send
        + Sync,
>;
pub type FeedbackFn = Arc<dyn Fn(&FeedbackContext) -> DVector<f64> + Send + Sync>;
pub type BoundaryFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// A delayed optimal control problem.
///
/// Argument convention for dynamics, cost rate and their partials:
/// `(t, x, y, u, v)` with `x = x(t)`, `y = x(t - tau1)`, `u = u(t)`,
/// `v = u(t - tau2)`.
#[derive(Clone)]
pub struct ProblemDef {
    pub name: String,
    /// State dimension.
    pub n: usize,
    /// Control dimension.
    pub m: usize,
    /// Maximum admissible delay; histories are defined on `[-max_delay, 0]`.
    pub max_delay: f64,
    pub dynamics: DynamicsFn,
    pub cost_rate: CostRateFn,
    /// ∂f/∂x, an n×n matrix.
    pub dfdx: StateJacobianFn,
    /// ∂f/∂y, an n×n matrix.
    pub dfdy: StateJacobianFn,
    /// ∂f⁰/∂x, an n-vector.
    pub dcdx: CostGradientFn,
    /// ∂f⁰/∂y, an n-vector.
    pub dcdy: CostGradientFn,
    /// Closed-form maximizer of the delayed Hamiltonian couple.
    pub feedback: FeedbackFn,
    /// State history φ¹ on `[-max_delay, 0]`.
    pub history_state: BoundaryFn,
    /// Control history φ² on `[-max_delay, 0)`.
    pub history_control: BoundaryFn,
    pub horizon: Horizon,
    pub terminal: Terminal,
    /// Per-component control bounds, when the control set is a box.
    pub control_box: Option<Vec<(f64, f64)>>,
}

impl ProblemDef {
    pub fn admits(&self, tau: &DelayPair) -> bool {
        (0.0..=self.max_delay).contains(&tau.tau1) && (0.0..=self.max_delay).contains(&tau.tau2)
    }
}

impl fmt::Debug for ProblemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemDef")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("max_delay", &self.max_delay)
            .field("horizon", &self.horizon)
            .field("terminal", &self.terminal)
            .finish_non_exhaustive()
    }
}

/// Everything the maximized Hamiltonian couple can depend on at one time.
///
/// `indicator_adv` is 1 exactly when `t <= t_end - tau2`, i.e. when the
/// advanced Hamiltonian term is active.
#[derive(Debug, Clone)]
pub struct FeedbackContext {
    pub t: f64,
    pub t_end: f64,
    pub tau: DelayPair,
    /// x(t)
    pub x_t: DVector<f64>,
    /// x(t - tau1)
    pub x_lag: DVector<f64>,
    /// x(t + tau2 - tau1)
    pub x_adv_mixed: DVector<f64>,
    /// x(t + tau2)
    pub x_adv: DVector<f64>,
    /// p(t)
    pub p_t: DVector<f64>,
    /// p(t + tau2)
    pub p_adv: DVector<f64>,
    /// 1 when the advanced term is active, else 0.
    pub indicator_adv: f64,
}

/// One converged solution at a given delay pair.
#[derive(Debug, Clone)]
pub struct Extremal {
    pub tau: DelayPair,
    pub t_end: f64,
    pub x: DenseTrajectory,
    pub p: DenseTrajectory,
    pub u: DenseTrajectory,
    pub cost: f64,
}

/// Normal-form Hamiltonian `⟨p, f(t,x,y,u,v)⟩ - f⁰(t,x,y,u,v)`.
pub fn hamiltonian(
    prob: &ProblemDef,
    t: f64,
    x: &DVector<f64>,
    y: &DVector<f64>,
    p: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> f64 {
    p.dot(&(prob.dynamics)(t, x, y, u, v)) - (prob.cost_rate)(t, x, y, u, v)
}

/// Gradient (by central differences) of the maximized Hamiltonian couple
/// with respect to the control value at `ctx.t`.
///
/// The couple is `H(t, ..., w, v) + indicator_adv * H(t + tau2, ..., u_adv, w)`
/// where `w` is the control being varied, `v = u(t - tau2)` and
/// `u_adv = u(t + tau2)`. At a converged extremal with interior controls this
/// gradient vanishes.
pub fn control_gradient(
    prob: &ProblemDef,
    ctx: &FeedbackContext,
    u_t: &DVector<f64>,
    v_t: &DVector<f64>,
    u_adv: &DVector<f64>,
) -> DVector<f64> {
    let couple = |w: &DVector<f64>| -> f64 {
        let mut total = hamiltonian(prob, ctx.t, &ctx.x_t, &ctx.x_lag, &ctx.p_t, w, v_t);
        if ctx.indicator_adv != 0.0 {
            total += ctx.indicator_adv
                * hamiltonian(
                    prob,
                    ctx.t + ctx.tau.tau2,
                    &ctx.x_adv,
                    &ctx.x_adv_mixed,
                    &ctx.p_adv,
                    u_adv,
                    w,
                );
        }
        total
    };
    let mut grad = DVector::zeros(prob.m);
    for j in 0..prob.m {
        let step = 1e-6 * u_t[j].abs().max(1.0);
        let mut hi = u_t.clone();
        hi[j] += step;
        let mut lo = u_t.clone();
        lo[j] -= step;
        grad[j] = (couple(&hi) - couple(&lo)) / (2.0 * step);
    }
    grad
}

/// One evaluation point for [`validate_derivatives`].
#[derive(Debug, Clone)]
pub struct SamplePoint {
    pub t: f64,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

/// Which supplied partial disagreed with the finite-difference check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartialKind {
    DynamicsX,
    DynamicsY,
    CostX,
    CostY,
}

impl fmt::Display for PartialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PartialKind::DynamicsX => "df/dx",
            PartialKind::DynamicsY => "df/dy",
            PartialKind::CostX => "dc/dx",
            PartialKind::CostY => "dc/dy",
        };
        f.write_str(s)
    }
}

/// Location and size of the worst analytic-vs-numeric disagreement.
#[derive(Debug, Clone)]
pub struct DerivativeMismatch {
    pub partial: PartialKind,
    pub point: usize,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

impl fmt::Display for DerivativeMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} entry ({}, {}) at sample point {}: analytic {:e}, central difference {:e} (rel {:.3e})",
            self.partial, self.row, self.col, self.point, self.analytic, self.numeric, self.rel_error
        )
    }
}

/// Outcome of the finite-difference validation of the supplied partials.
#[derive(Debug, Clone)]
pub struct DerivativeReport {
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub worst: Option<DerivativeMismatch>,
}

impl DerivativeReport {
    pub fn passes(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

impl fmt::Display for DerivativeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passes() {
            write!(
                f,
                "derivatives consistent: max relative error {:.3e} <= {:.0e}",
                self.max_rel_error, self.tolerance
            )
        } else {
            match &self.worst {
                Some(w) => write!(f, "derivative check failed: {w}"),
                None => write!(f, "derivative check failed"),
            }
        }
    }
}

/// Compares the supplied partials against central finite differences of the
/// dynamics and cost rate at the given sample points.
pub fn validate_derivatives(prob: &ProblemDef, points: &[SamplePoint]) -> DerivativeReport {
    let mut report = DerivativeReport {
        max_rel_error: 0.0,
        tolerance: 1e-6,
        worst: None,
    };

    let mut record = |partial: PartialKind,
                      point: usize,
                      row: usize,
                      col: usize,
                      analytic: f64,
                      numeric: f64,
                      report: &mut DerivativeReport| {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(DerivativeMismatch {
                partial,
                point,
                row,
                col,
                analytic,
                numeric,
                rel_error: rel,
            });
        }
    };

    for (idx, pt) in points.iter().enumerate() {
        for col in 0..prob.n {
            // State argument.
            let step = 1e-6 * pt.x[col].abs().max(1.0);
            let mut hi = pt.x.clone();
            hi[col] += step;
            let mut lo = pt.x.clone();
            lo[col] -= step;
            let fd_dyn = ((prob.dynamics)(pt.t, &hi, &pt.y, &pt.u, &pt.v)
                - (prob.dynamics)(pt.t, &lo, &pt.y, &pt.u, &pt.v))
                / (2.0 * step);
            let fd_cost = ((prob.cost_rate)(pt.t, &hi, &pt.y, &pt.u, &pt.v)
                - (prob.cost_rate)(pt.t, &lo, &pt.y, &pt.u, &pt.v))
                / (2.0 * step);
            let jac = (prob.dfdx)(pt.t, &pt.x, &pt.y, &pt.u, &pt.v);
            for row in 0..prob.n {
                record(
                    PartialKind::DynamicsX,
                    idx,
                    row,
                    col,
                    jac[(row, col)],
                    fd_dyn[row],
                    &mut report,
                );
            }
            let grad = (prob.dcdx)(pt.t, &pt.x, &pt.y, &pt.u, &pt.v);
            record(PartialKind::CostX, idx, col, 0, grad[col], fd_cost, &mut report);

            // Delayed-state argument.
            let step = 1e-6 * pt.y[col].abs().max(1.0);
            let mut hi = pt.y.clone();
            hi[col] += step;
            let mut lo = pt.y.clone();
            lo[col] -= step;
            let fd_dyn = ((prob.dynamics)(pt.t, &pt.x, &hi, &pt.u, &pt.v)
                - (prob.dynamics)(pt.t, &pt.x, &lo, &pt.u, &pt.v))
                / (2.0 * step);
            let fd_cost = ((prob.cost_rate)(pt.t, &pt.x, &hi, &pt.u, &pt.v)
                - (prob.cost_rate)(pt.t, &pt.x, &lo, &pt.u, &pt.v))
                / (2.0 * step);
            let jac = (prob.dfdy)(pt.t, &pt.x, &pt.y, &pt.u, &pt.v);
            for row in 0..prob.n {
                record(
                    PartialKind::DynamicsY,
                    idx,
                    row,
                    col,
                    jac[(row, col)],
                    fd_dyn[row],
                    &mut report,
                );
            }
            let grad = (prob.dcdy)(pt.t, &pt.x, &pt.y, &pt.u, &pt.v);
            record(PartialKind::CostY, idx, col, 0, grad[col], fd_cost, &mut report);
        }
    }
    report
}
