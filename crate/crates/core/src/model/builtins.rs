//! The two builtin benchmark problems.
//!
//! `ocp1` is a scalar academic problem with delays in both state and control
//! whose optimal synthesis is known in closed form (see [`crate::reference`]).
//! `ocp2` models a two-stage nonlinear continuous stirred tank reactor (CSTR)
//! with a scalar delay acting on the state coupling between the stages.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{Horizon, ProblemDef, Terminal};

/// Names accepted by [`by_name`].
pub const BUILTIN_NAMES: [&str; 2] = ["ocp1", "ocp2"];

/// Looks up a builtin problem by its registered name.
pub fn by_name(name: &str) -> Option<ProblemDef> {
    match name {
        "ocp1" => Some(ocp1()),
        "ocp2" => Some(ocp2()),
        _ => None,
    }
}

/// Scalar benchmark: minimize ∫₀³ x² + u² dt subject to
/// ẋ(t) = x(t-τ¹) u(t-τ²) with x ≡ 1 on [-τ¹, 0] and u ≡ 0 on [-τ², 0).
///
/// The maximization condition yields the feedback
/// u(t) = ½ · 1_{[0, 3-τ²]}(t) · x(t+τ²-τ¹) · p(t+τ²).
pub fn ocp1() -> ProblemDef {
    ProblemDef {
        name: "ocp1".into(),
        n: 1,
        m: 1,
        max_delay: 2.0,
        dynamics: Arc::new(|_t, _x, y, _u, v| DVector::from_element(1, y[0] * v[0])),
        cost_rate: Arc::new(|_t, x, _y, u, _v| x[0] * x[0] + u[0] * u[0]),
        dfdx: Arc::new(|_t, _x, _y, _u, _v| DMatrix::zeros(1, 1)),
        dfdy: Arc::new(|_t, _x, _y, _u, v| DMatrix::from_element(1, 1, v[0])),
        dcdx: Arc::new(|_t, x, _y, _u, _v| DVector::from_element(1, 2.0 * x[0])),
        dcdy: Arc::new(|_t, _x, _y, _u, _v| DVector::zeros(1)),
        feedback: Arc::new(|ctx| {
            DVector::from_element(
                1,
                0.5 * ctx.indicator_adv * ctx.x_adv_mixed[0] * ctx.p_adv[0],
            )
        }),
        history_state: Arc::new(|_t| DVector::from_element(1, 1.0)),
        history_control: Arc::new(|_t| DVector::zeros(1)),
        horizon: Horizon::FixedTime(3.0),
        terminal: Terminal::FreeEndpoint,
        control_box: None,
    }
}

fn arrhenius(y: f64) -> f64 {
    (25.0 * y / (y + 2.0)).exp()
}

/// d/dy of the exponent 25y/(y+2).
fn arrhenius_rate(y: f64) -> f64 {
    50.0 / ((y + 2.0) * (y + 2.0))
}

fn r1(x: f64, y: f64) -> f64 {
    (x + 0.5) * arrhenius(y)
}

fn r2(x: f64, y: f64) -> f64 {
    (x + 0.25) * arrhenius(y)
}

/// Two-stage CSTR benchmark: minimize ∫₀² ‖x‖² + 0.1‖u‖² dt over a
/// four-state, two-control reactor cascade where the first stage feeds the
/// second with a transport delay on the state only (tau2 = 0).
///
/// The feedback laws are u¹ = -5 p²(x² + 0.25) and u² = -5 p⁴(x⁴ + 0.25).
pub fn ocp2() -> ProblemDef {
    ProblemDef {
        name: "ocp2".into(),
        n: 4,
        m: 2,
        max_delay: 2.0,
        dynamics: Arc::new(|_t, x, y, u, _v| {
            let r1v = r1(x[0], x[1]);
            let r2v = r2(x[2], x[3]);
            DVector::from_vec(vec![
                0.5 - x[0] - r1v,
                r1v - (u[0] + 2.0) * (x[1] + 0.25),
                y[0] - x[2] - r2v + 0.25,
                y[1] - 2.0 * x[3] - u[1] * (x[3] + 0.25) + r2v - 0.25,
            ])
        }),
        cost_rate: Arc::new(|_t, x, _y, u, _v| x.norm_squared() + 0.1 * u.norm_squared()),
        dfdx: Arc::new(|_t, x, _y, u, _v| {
            let e1 = arrhenius(x[1]);
            let d1 = r1(x[0], x[1]) * arrhenius_rate(x[1]);
            let e2 = arrhenius(x[3]);
            let d2 = r2(x[2], x[3]) * arrhenius_rate(x[3]);
            DMatrix::from_row_slice(
                4,
                4,
                &[
                    -1.0 - e1, -d1, 0.0, 0.0, //
                    e1, d1 - (u[0] + 2.0), 0.0, 0.0, //
                    0.0, 0.0, -1.0 - e2, -d2, //
                    0.0, 0.0, e2, -2.0 - u[1] + d2,
                ],
            )
        }),
        dfdy: Arc::new(|_t, _x, _y, _u, _v| {
            let mut j = DMatrix::zeros(4, 4);
            j[(2, 0)] = 1.0;
            j[(3, 1)] = 1.0;
            j
        }),
        dcdx: Arc::new(|_t, x, _y, _u, _v| 2.0 * x),
        dcdy: Arc::new(|_t, _x, _y, _u, _v| DVector::zeros(4)),
        feedback: Arc::new(|ctx| {
            DVector::from_vec(vec![
                -5.0 * ctx.p_t[1] * (ctx.x_t[1] + 0.25),
                -5.0 * ctx.p_t[3] * (ctx.x_t[3] + 0.25),
            ])
        }),
        history_state: Arc::new(|_t| DVector::from_vec(vec![0.15, -0.03, 0.1, 0.0])),
        history_control: Arc::new(|_t| DVector::zeros(2)),
        horizon: Horizon::FixedTime(2.0),
        terminal: Terminal::FreeEndpoint,
        control_box: None,
    }
}
