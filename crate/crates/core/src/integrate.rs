//! Forward state and backward adjoint sweeps by explicit second-order
//! Runge-Kutta (Heun), plus the Simpson cost of a run.
//!
//! The two sweeps realize one inner iteration of the delayed boundary value
//! system. Delayed and advanced arguments are resolved by dense output at the
//! exact times, with no grid realignment:
//!
//! * the forward sweep reads state values at times up to its integration
//!   front from the in-progress trajectory (and the state history below the
//!   grid), and at times beyond the front from the previous iterate's state;
//!   adjoint values always come from the current shooting guess;
//! * the backward sweep reads advanced adjoint values from its own already
//!   computed portion, which is available because it integrates from the
//!   final time down.

use nalgebra::DVector;
use thiserror::Error;

use crate::model::{DelayPair, FeedbackContext, ProblemDef};
use crate::traj::{
    interval_quadratic, simpson_scalar, snap_node, DenseTrajectory, Grid, History, TrajError,
};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("{sweep} sweep produced a non-finite value at t = {t}")]
    NonFinite { sweep: &'static str, t: f64 },
    #[error(transparent)]
    Traj(#[from] TrajError),
}

/// Inputs shared by the two sweeps of one inner iteration.
///
/// `prev_x` and `prev_u` come from the previous iterate; they are only read
/// through dense output, so they may live on a different grid than `grid`.
pub struct SweepInputs<'a> {
    pub prob: &'a ProblemDef,
    pub tau: DelayPair,
    pub grid: Grid,
    pub prev_x: &'a DenseTrajectory,
    pub prev_u: &'a DenseTrajectory,
}

impl<'a> SweepInputs<'a> {
    fn indicator(&self, t: f64, cutoff: f64) -> f64 {
        // Closed-right switch with an ulp-scale guard so that cutoffs landing
        // on grid nodes are classified consistently.
        if t <= cutoff + 1e-9 * self.grid.h() {
            1.0
        } else {
            0.0
        }
    }
}

/// Integrates the state forward under the feedback law evaluated against the
/// shooting guess `pbar`, producing the state and control trajectories.
pub fn forward_state_sweep(
    inp: &SweepInputs,
    pbar: &DenseTrajectory,
) -> Result<(DenseTrajectory, DenseTrajectory), SweepError> {
    let sweep = ForwardSweep {
        inp,
        pbar,
        x_history: History::Func {
            f: inp.prob.history_state.clone(),
            start: inp.grid.t0() - inp.prob.max_delay,
        },
        u_history: History::Func {
            f: inp.prob.history_control.clone(),
            start: inp.grid.t0() - inp.prob.max_delay,
        },
    };
    sweep.run()
}

struct ForwardSweep<'a> {
    inp: &'a SweepInputs<'a>,
    pbar: &'a DenseTrajectory,
    x_history: History,
    u_history: History,
}

/// Mutable per-sweep node storage; split from the sweep configuration so the
/// evaluation helpers can borrow it immutably while values are appended.
struct ForwardNodes {
    x_values: Vec<DVector<f64>>,
    x_slopes: Vec<DVector<f64>>,
    u_values: Vec<DVector<f64>>,
}

impl<'a> ForwardSweep<'a> {
    fn run(&self) -> Result<(DenseTrajectory, DenseTrajectory), SweepError> {
        let grid = self.inp.grid;
        let n = grid.intervals();
        let h = grid.h();
        let prob = self.inp.prob;
        let tau = self.inp.tau;

        let mut nodes = ForwardNodes {
            x_values: Vec::with_capacity(n + 1),
            x_slopes: Vec::with_capacity(n + 1),
            u_values: Vec::with_capacity(n + 1),
        };
        nodes.x_values.push((prob.history_state)(grid.t0()));

        for k in 0..n {
            let t_k = grid.node(k);
            let t_k1 = grid.node(k + 1);

            // Stage 1 at the corrected left node; the control sample computed
            // here is the stored node value.
            let x_k = nodes.x_values[k].clone();
            let ctx = self.context(&nodes, t_k, &x_k);
            let u_k = (prob.feedback)(&ctx);
            nodes.u_values.push(u_k.clone());
            let k1 = self.dynamics_at(&nodes, t_k, &x_k, &u_k)?;
            nodes.x_slopes.push(k1.clone());

            // Stage 2 at the Euler predictor; its control sample is
            // provisional and not stored.
            let x_pred = &x_k + h * &k1;
            let ctx = self.context(&nodes, t_k1, &x_pred);
            let u_prov = (prob.feedback)(&ctx);
            let k2 = self.dynamics_at(&nodes, t_k1, &x_pred, &u_prov)?;

            let x_next = &x_k + (h / 2.0) * (&k1 + &k2);
            if !x_next.iter().all(|v| v.is_finite()) {
                return Err(SweepError::NonFinite {
                    sweep: "forward state",
                    t: t_k1,
                });
            }
            nodes.x_values.push(x_next);
        }

        // Terminal node: control and slope from the corrected final state.
        let t_n = grid.node(n);
        let x_n = nodes.x_values[n].clone();
        let ctx = self.context(&nodes, t_n, &x_n);
        let u_n = (prob.feedback)(&ctx);
        nodes.u_values.push(u_n.clone());
        let slope_n = self.dynamics_at(&nodes, t_n, &x_n, &u_n)?;
        nodes.x_slopes.push(slope_n);

        let x = DenseTrajectory::new(grid, nodes.x_values, nodes.x_slopes, self.x_history.clone())?;
        let u = DenseTrajectory::from_nodes_fd(grid, nodes.u_values, self.u_history.clone())?;
        Ok((x, u))
    }

    /// Feedback context at stage time `t` with stage state `x_stage`.
    fn context(&self, nodes: &ForwardNodes, t: f64, x_stage: &DVector<f64>) -> FeedbackContext {
        let tau = self.inp.tau;
        let t_end = self.inp.grid.t_end();
        let p_t = self.pbar.eval(t);
        let p_adv = if tau.tau2 == 0.0 {
            p_t.clone()
        } else {
            self.pbar.eval(t + tau.tau2)
        };
        FeedbackContext {
            t,
            t_end,
            tau,
            x_t: x_stage.clone(),
            x_lag: self.state_arg(nodes, t - tau.tau1, t, x_stage),
            x_adv_mixed: self.state_arg(nodes, t + tau.tau2 - tau.tau1, t, x_stage),
            x_adv: self.state_arg(nodes, t + tau.tau2, t, x_stage),
            p_t,
            p_adv,
            indicator_adv: self.inp.indicator(t, t_end - tau.tau2),
        }
    }

    fn dynamics_at(
        &self,
        nodes: &ForwardNodes,
        t: f64,
        x_stage: &DVector<f64>,
        u_stage: &DVector<f64>,
    ) -> Result<DVector<f64>, SweepError> {
        let tau = self.inp.tau;
        let y = self.state_arg(nodes, t - tau.tau1, t, x_stage);
        let v = self.control_arg(nodes, t - tau.tau2, t, u_stage);
        let f = (self.inp.prob.dynamics)(t, x_stage, &y, u_stage, &v);
        if f.iter().all(|v| v.is_finite()) {
            Ok(f)
        } else {
            Err(SweepError::NonFinite {
                sweep: "forward state",
                t,
            })
        }
    }

    /// State value at `time`: the stage value for a zero effective delay,
    /// the in-progress trajectory (or history) up to the integration front,
    /// and the previous iterate beyond it.
    fn state_arg(
        &self,
        nodes: &ForwardNodes,
        time: f64,
        stage_t: f64,
        x_stage: &DVector<f64>,
    ) -> DVector<f64> {
        if time == stage_t {
            return x_stage.clone();
        }
        let grid = &self.inp.grid;
        if time < grid.t0() {
            return self.x_history.eval(time);
        }
        let front = nodes.x_slopes.len().saturating_sub(1);
        if nodes.x_slopes.is_empty() || time > grid.node(front) {
            return self.inp.prev_x.eval(time);
        }
        if let Some(k) = snap_node(grid, time) {
            return nodes.x_values[k].clone();
        }
        let k = grid.interval_of(time).min(front.saturating_sub(1));
        interval_quadratic(
            &nodes.x_values[k],
            &nodes.x_slopes[k],
            &nodes.x_values[k + 1],
            grid.h(),
            time - grid.node(k),
        )
    }

    /// Control value at `time`: the stage value for a zero effective delay,
    /// the history below the grid, linear interpolation of the in-progress
    /// samples up to the front, and the previous iterate beyond it.
    fn control_arg(
        &self,
        nodes: &ForwardNodes,
        time: f64,
        stage_t: f64,
        u_stage: &DVector<f64>,
    ) -> DVector<f64> {
        if time == stage_t {
            return u_stage.clone();
        }
        let grid = &self.inp.grid;
        if time < grid.t0() {
            return self.u_history.eval(time);
        }
        let front = nodes.u_values.len().saturating_sub(1);
        if nodes.u_values.is_empty() || time > grid.node(front) {
            return self.inp.prev_u.eval(time);
        }
        if let Some(k) = snap_node(grid, time) {
            return nodes.u_values[k].clone();
        }
        let k = grid.interval_of(time).min(front.saturating_sub(1));
        let alpha = (time - grid.node(k)) / grid.h();
        (1.0 - alpha) * &nodes.u_values[k] + alpha * &nodes.u_values[k + 1]
    }
}

/// Integrates the adjoint backward from `p(T) = p_terminal` against the
/// freshly computed state and control trajectories.
///
/// On `[0, T - tau1]` the right-hand side carries the advanced term reading
/// `p(t + tau1)` from the already computed upper portion of the sweep; past
/// `T - tau1` only the instantaneous term remains. The terminal node stores
/// `p_terminal` bitwise.
pub fn backward_adjoint_sweep(
    inp: &SweepInputs,
    x: &DenseTrajectory,
    u: &DenseTrajectory,
    p_terminal: DVector<f64>,
) -> Result<DenseTrajectory, SweepError> {
    let grid = inp.grid;
    let n = grid.intervals();
    let h = grid.h();
    let prob = inp.prob;
    let dim = prob.n;

    let mut values = vec![DVector::zeros(dim); n + 1];
    let mut slopes = vec![DVector::zeros(dim); n + 1];
    values[n] = p_terminal;

    for k in (0..n).rev() {
        let t_k = grid.node(k);
        let t_k1 = grid.node(k + 1);

        // Slope at the right node doubles as this interval's first stage.
        let k1 = adjoint_rhs(inp, x, u, &values, &slopes, k + 1, t_k1, &values[k + 1].clone())?;
        slopes[k + 1] = k1.clone();

        let predictor = &values[k + 1] - h * &k1;
        let k2 = adjoint_rhs_inflight(
            inp,
            x,
            u,
            &values,
            &slopes,
            k + 1,
            t_k,
            &predictor,
        )?;

        let p_k = &values[k + 1] - (h / 2.0) * (&k1 + &k2);
        if !p_k.iter().all(|v| v.is_finite()) {
            return Err(SweepError::NonFinite {
                sweep: "backward adjoint",
                t: t_k,
            });
        }
        values[k] = p_k;
    }

    let slope_0 = adjoint_rhs(inp, x, u, &values, &slopes, 0, grid.node(0), &values[0].clone())?;
    slopes[0] = slope_0;

    Ok(DenseTrajectory::new(
        grid,
        values,
        slopes,
        History::zero(dim, grid.t0() - prob.max_delay),
    )?)
}

/// Adjoint right-hand side at a completed node (stage time on the front).
fn adjoint_rhs(
    inp: &SweepInputs,
    x: &DenseTrajectory,
    u: &DenseTrajectory,
    values: &[DVector<f64>],
    slopes: &[DVector<f64>],
    filled_from: usize,
    t: f64,
    p_stage: &DVector<f64>,
) -> Result<DVector<f64>, SweepError> {
    adjoint_rhs_impl(inp, x, u, values, slopes, filled_from, t, p_stage, None)
}

/// Adjoint right-hand side at a stage below the front (the in-flight
/// interval is bridged linearly between the stage value and the front node).
fn adjoint_rhs_inflight(
    inp: &SweepInputs,
    x: &DenseTrajectory,
    u: &DenseTrajectory,
    values: &[DVector<f64>],
    slopes: &[DVector<f64>],
    filled_from: usize,
    t: f64,
    p_stage: &DVector<f64>,
) -> Result<DVector<f64>, SweepError> {
    adjoint_rhs_impl(
        inp,
        x,
        u,
        values,
        slopes,
        filled_from,
        t,
        p_stage,
        Some(t),
    )
}

#[allow(clippy::too_many_arguments)]
fn adjoint_rhs_impl(
    inp: &SweepInputs,
    x: &DenseTrajectory,
    u: &DenseTrajectory,
    values: &[DVector<f64>],
    slopes: &[DVector<f64>],
    filled_from: usize,
    t: f64,
    p_stage: &DVector<f64>,
    inflight_t: Option<f64>,
) -> Result<DVector<f64>, SweepError> {
    let prob = inp.prob;
    let tau = inp.tau;
    let grid = &inp.grid;
    let t_end = grid.t_end();

    let x_t = x.eval(t);
    let y_t = x.eval(t - tau.tau1);
    let u_t = u.eval(t);
    let v_t = u.eval(t - tau.tau2);

    // -dH/dx = -(df/dx^T p - dc/dx) with the normal multiplier fixed at -1.
    let mut rhs = (prob.dcdx)(t, &x_t, &y_t, &u_t, &v_t)
        - (prob.dfdx)(t, &x_t, &y_t, &u_t, &v_t).transpose() * p_stage;

    if inp.indicator(t, t_end - tau.tau1) == 1.0 {
        let ta = t + tau.tau1;
        let p_adv = if tau.tau1 == 0.0 {
            p_stage.clone()
        } else {
            advanced_adjoint(grid, values, slopes, filled_from, t, p_stage, inflight_t, ta)
        };
        let x_a = x.eval(ta);
        let u_a = u.eval(ta);
        let v_a = u.eval(ta - tau.tau2);
        rhs += (prob.dcdy)(ta, &x_a, &x_t, &u_a, &v_a)
            - (prob.dfdy)(ta, &x_a, &x_t, &u_a, &v_a).transpose() * p_adv;
    }

    if rhs.iter().all(|v| v.is_finite()) {
        Ok(rhs)
    } else {
        Err(SweepError::NonFinite {
            sweep: "backward adjoint",
            t,
        })
    }
}

/// Reads `p(ta)` from the computed upper portion of the backward sweep.
///
/// Completed intervals are reconstructed with the quadratic anchored at their
/// right node (whose value and slope are final); times inside the in-flight
/// interval interpolate linearly between the stage value and the front node.
#[allow(clippy::too_many_arguments)]
fn advanced_adjoint(
    grid: &Grid,
    values: &[DVector<f64>],
    slopes: &[DVector<f64>],
    filled_from: usize,
    stage_t: f64,
    p_stage: &DVector<f64>,
    inflight_t: Option<f64>,
    ta: f64,
) -> DVector<f64> {
    let n = grid.intervals();
    if ta >= grid.t_end() {
        return values[n].clone();
    }
    if ta == stage_t {
        return p_stage.clone();
    }
    if let Some(k) = snap_node(grid, ta) {
        if k >= filled_from {
            return values[k].clone();
        }
    }
    let front_time = grid.node(filled_from);
    if ta < front_time {
        // In-flight interval: linear bridge from the stage estimate.
        let t0 = inflight_t.unwrap_or(stage_t);
        let alpha = (ta - t0) / (front_time - t0);
        return (1.0 - alpha) * p_stage + alpha * &values[filled_from];
    }
    let j = grid.interval_of(ta).max(filled_from);
    let h = grid.h();
    // Quadratic through (node j, v_j), (node j+1, v_{j+1}) with the final
    // slope at the right node.
    let s_back = ta - grid.node(j + 1);
    let c2 = (&values[j] - &values[j + 1] + h * &slopes[j + 1]) / (h * h);
    &values[j + 1] + s_back * &slopes[j + 1] + (s_back * s_back) * c2
}

/// Simpson quadrature of the running cost along stored trajectories.
pub fn trajectory_cost(
    prob: &ProblemDef,
    tau: DelayPair,
    x: &DenseTrajectory,
    u: &DenseTrajectory,
    grid: &Grid,
) -> Result<f64, TrajError> {
    let samples: Vec<f64> = (0..=grid.intervals())
        .map(|k| {
            let t = grid.node(k);
            (prob.cost_rate)(
                t,
                &x.eval(t),
                &x.eval(t - tau.tau1),
                &u.eval(t),
                &u.eval(t - tau.tau2),
            )
        })
        .collect();
    simpson_scalar(&samples, grid.h())
}

/// Feedback context assembled from stored trajectories, as used when
/// re-sampling controls or checking stationarity at a converged solution.
pub fn feedback_context_at(
    prob: &ProblemDef,
    tau: DelayPair,
    x: &DenseTrajectory,
    p: &DenseTrajectory,
    t: f64,
) -> FeedbackContext {
    let grid = x.grid();
    let t_end = grid.t_end();
    let ind = if t <= t_end - tau.tau2 + 1e-9 * grid.h() {
        1.0
    } else {
        0.0
    };
    FeedbackContext {
        t,
        t_end,
        tau,
        x_t: x.eval(t),
        x_lag: x.eval(t - tau.tau1),
        x_adv_mixed: x.eval(t + tau.tau2 - tau.tau1),
        x_adv: x.eval(t + tau.tau2),
        p_t: p.eval(t),
        p_adv: p.eval(t + tau.tau2),
        indicator_adv: ind,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ocp1, Horizon, Terminal};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn vec1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn constant_prev(
        grid: Grid,
        dim: usize,
        value: f64,
        start: f64,
    ) -> DenseTrajectory {
        DenseTrajectory::constant(
            grid,
            DVector::from_element(dim, value),
            History::constant(DVector::from_element(dim, value), start),
        )
    }

    /// Scalar exponential decay with no feedback coupling, for integrator
    /// order checks.
    fn decay_problem() -> ProblemDef {
        ProblemDef {
            name: "decay".into(),
            n: 1,
            m: 1,
            max_delay: 1.0,
            dynamics: Arc::new(|_t, x, _y, _u, _v| -x.clone()),
            cost_rate: Arc::new(|_t, _x, _y, _u, _v| 0.0),
            dfdx: Arc::new(|_t, _x, _y, _u, _v| DMatrix::from_element(1, 1, -1.0)),
            dfdy: Arc::new(|_t, _x, _y, _u, _v| DMatrix::zeros(1, 1)),
            dcdx: Arc::new(|_t, _x, _y, _u, _v| DVector::zeros(1)),
            dcdy: Arc::new(|_t, _x, _y, _u, _v| DVector::zeros(1)),
            feedback: Arc::new(|_ctx| DVector::zeros(1)),
            history_state: Arc::new(|_t| DVector::from_element(1, 1.0)),
            history_control: Arc::new(|_t| DVector::zeros(1)),
            horizon: Horizon::FixedTime(1.0),
            terminal: Terminal::FreeEndpoint,
            control_box: None,
        }
    }

    #[test]
    fn zero_adjoint_guess_freezes_ocp1_state() {
        let prob = ocp1();
        let grid = Grid::new(0.0, 3.0, 60).unwrap();
        let tau = DelayPair::new(1.0, 2.0);
        let prev_x = constant_prev(grid, 1, 1.0, -2.0);
        let prev_u = constant_prev(grid, 1, 0.0, -2.0);
        let inp = SweepInputs {
            prob: &prob,
            tau,
            grid,
            prev_x: &prev_x,
            prev_u: &prev_u,
        };
        let pbar = DenseTrajectory::constant(grid, vec1(0.0), History::zero(1, -2.0));
        let (x, u) = forward_state_sweep(&inp, &pbar).unwrap();
        for k in 0..=60 {
            assert_eq!(x.node_value(k)[0], 1.0);
            assert_eq!(u.node_value(k)[0], 0.0);
        }
    }

    #[test]
    fn decay_matches_analytic_solution() {
        let prob = decay_problem();
        let grid = Grid::new(0.0, 1.0, 100).unwrap();
        let prev_x = constant_prev(grid, 1, 1.0, -1.0);
        let prev_u = constant_prev(grid, 1, 0.0, -1.0);
        let inp = SweepInputs {
            prob: &prob,
            tau: DelayPair::ZERO,
            grid,
            prev_x: &prev_x,
            prev_u: &prev_u,
        };
        let pbar = DenseTrajectory::constant(grid, vec1(0.0), History::zero(1, -1.0));
        let (x, _u) = forward_state_sweep(&inp, &pbar).unwrap();
        assert_relative_eq!(x.node_value(100)[0], (-1.0f64).exp(), epsilon = 1e-3);
    }

    #[test]
    fn forward_halving_h_quarters_the_error() {
        let prob = decay_problem();
        let exact = (-1.0f64).exp();
        let mut errs = Vec::new();
        for n in [50usize, 100] {
            let grid = Grid::new(0.0, 1.0, n).unwrap();
            let prev_x = constant_prev(grid, 1, 1.0, -1.0);
            let prev_u = constant_prev(grid, 1, 0.0, -1.0);
            let inp = SweepInputs {
                prob: &prob,
                tau: DelayPair::ZERO,
                grid,
                prev_x: &prev_x,
                prev_u: &prev_u,
            };
            let pbar = DenseTrajectory::constant(grid, vec1(0.0), History::zero(1, -1.0));
            let (x, _) = forward_state_sweep(&inp, &pbar).unwrap();
            errs.push((x.node_value(n)[0] - exact).abs());
        }
        let ratio = errs[0] / errs[1];
        assert!(
            (3.2..=4.8).contains(&ratio),
            "error ratio {ratio} not within 4 +- 20%"
        );
    }

    #[test]
    fn backward_linear_adjoint_for_frozen_ocp1() {
        // With u = 0 and x = 1 the advanced term vanishes and dp/dt = 2x = 2,
        // so p(t) = 2(t - 3) from p(3) = 0.
        let prob = ocp1();
        let grid = Grid::new(0.0, 3.0, 60).unwrap();
        let tau = DelayPair::new(1.0, 2.0);
        let prev_x = constant_prev(grid, 1, 1.0, -2.0);
        let prev_u = constant_prev(grid, 1, 0.0, -2.0);
        let inp = SweepInputs {
            prob: &prob,
            tau,
            grid,
            prev_x: &prev_x,
            prev_u: &prev_u,
        };
        let x = DenseTrajectory::constant(
            grid,
            vec1(1.0),
            History::constant(vec1(1.0), -2.0),
        );
        let u = DenseTrajectory::constant(grid, vec1(0.0), History::zero(1, -2.0));
        let p = backward_adjoint_sweep(&inp, &x, &u, vec1(0.0)).unwrap();
        assert_eq!(p.node_value(60)[0], 0.0);
        for k in 0..=60 {
            let t = grid.node(k);
            assert_relative_eq!(p.node_value(k)[0], 2.0 * (t - 3.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_dynamics_zero_cost_keeps_terminal_adjoint() {
        let mut prob = decay_problem();
        prob.dynamics = Arc::new(|_t, _x, _y, _u, _v| DVector::zeros(1));
        prob.dfdx = Arc::new(|_t, _x, _y, _u, _v| DMatrix::zeros(1, 1));
        let grid = Grid::new(0.0, 1.0, 10).unwrap();
        let prev_x = constant_prev(grid, 1, 1.0, -1.0);
        let prev_u = constant_prev(grid, 1, 0.0, -1.0);
        let inp = SweepInputs {
            prob: &prob,
            tau: DelayPair::new(0.3, 0.0),
            grid,
            prev_x: &prev_x,
            prev_u: &prev_u,
        };
        let x = DenseTrajectory::constant(grid, vec1(1.0), History::constant(vec1(1.0), -1.0));
        let u = DenseTrajectory::constant(grid, vec1(0.0), History::zero(1, -1.0));
        let p = backward_adjoint_sweep(&inp, &x, &u, vec1(0.7)).unwrap();
        for k in 0..=10 {
            assert_eq!(p.node_value(k)[0], 0.7);
        }
    }

    #[test]
    fn zero_delay_sweeps_match_textbook_heun() {
        // At tau = (0,0) the forward sweep must coincide with plain Heun on
        // the merged system, and the backward sweep with plain Heun on the
        // time-reversed adjoint.
        let prob = ocp1();
        let n = 30;
        let grid = Grid::new(0.0, 3.0, n).unwrap();
        let h = grid.h();
        let prev_x = constant_prev(grid, 1, 1.0, -2.0);
        let prev_u = constant_prev(grid, 1, 0.0, -2.0);
        let inp = SweepInputs {
            prob: &prob,
            tau: DelayPair::ZERO,
            grid,
            prev_x: &prev_x,
            prev_u: &prev_u,
        };
        // A nonconstant adjoint guess so the feedback actually varies.
        let pbar_values: Vec<_> = (0..=n).map(|k| vec1(-(grid.node(k) - 3.0) / 3.0)).collect();
        let pbar =
            DenseTrajectory::from_nodes_fd(grid, pbar_values.clone(), History::zero(1, -2.0))
                .unwrap();

        let (x, u) = forward_state_sweep(&inp, &pbar).unwrap();

        // Reference forward Heun: u = 1/2 x p, xdot = x u.
        let feedback = |x: f64, p: f64| 0.5 * x * p;
        let mut x_ref = vec![1.0];
        for k in 0..n {
            let xk = x_ref[k];
            let pk = pbar_values[k][0];
            let k1 = xk * feedback(xk, pk);
            let xp = xk + h * k1;
            let pk1 = pbar_values[k + 1][0];
            let k2 = xp * feedback(xp, pk1);
            x_ref.push(xk + h / 2.0 * (k1 + k2));
        }
        for k in 0..=n {
            assert_relative_eq!(x.node_value(k)[0], x_ref[k], epsilon = 1e-14);
            assert_relative_eq!(
                u.node_value(k)[0],
                feedback(x_ref[k], pbar_values[k][0]),
                epsilon = 1e-14
            );
        }

        // Reference backward Heun on dp/dt = 2x - p u (merged dH/dx + dH/dy).
        let p_rhs = |xk: f64, uk: f64, p: f64| 2.0 * xk - p * uk;
        let p = backward_adjoint_sweep(&inp, &x, &u, vec1(0.0)).unwrap();
        let mut p_ref = vec![0.0; n + 1];
        for k in (0..n).rev() {
            let pk1 = p_ref[k + 1];
            let k1 = p_rhs(x.node_value(k + 1)[0], u.node_value(k + 1)[0], pk1);
            let pred = pk1 - h * k1;
            let k2 = p_rhs(x.node_value(k)[0], u.node_value(k)[0], pred);
            p_ref[k] = pk1 - h / 2.0 * (k1 + k2);
        }
        for k in 0..=n {
            assert_relative_eq!(p.node_value(k)[0], p_ref[k], epsilon = 1e-13);
        }
    }

    #[test]
    fn cost_of_frozen_ocp1_run() {
        let prob = ocp1();
        let grid = Grid::new(0.0, 3.0, 60).unwrap();
        let tau = DelayPair::new(1.0, 2.0);
        let x = DenseTrajectory::constant(grid, vec1(1.0), History::constant(vec1(1.0), -2.0));
        let u = DenseTrajectory::constant(grid, vec1(0.0), History::zero(1, -2.0));
        let cost = trajectory_cost(&prob, tau, &x, &u, &grid).unwrap();
        assert_relative_eq!(cost, 3.0, epsilon = 1e-13);

        let mut zero_cost = ocp1();
        zero_cost.cost_rate = Arc::new(|_, _, _, _, _| 0.0);
        assert_eq!(
            trajectory_cost(&zero_cost, tau, &x, &u, &grid).unwrap(),
            0.0
        );
    }

    #[test]
    fn nonfinite_forward_sweep_is_reported() {
        let mut prob = decay_problem();
        prob.dynamics = Arc::new(|_t, x, _y, _u, _v| x * f64::INFINITY);
        let grid = Grid::new(0.0, 1.0, 4).unwrap();
        let prev_x = constant_prev(grid, 1, 1.0, -1.0);
        let prev_u = constant_prev(grid, 1, 0.0, -1.0);
        let inp = SweepInputs {
            prob: &prob,
            tau: DelayPair::ZERO,
            grid,
            prev_x: &prev_x,
            prev_u: &prev_u,
        };
        let pbar = DenseTrajectory::constant(grid, vec1(0.0), History::zero(1, -1.0));
        assert!(matches!(
            forward_state_sweep(&inp, &pbar),
            Err(SweepError::NonFinite { .. })
        ));
    }
}
