//! Uniform time grids, piecewise-quadratic dense trajectories with history
//! extension, node-sampled norms and Simpson quadrature.
//!
//! A [`DenseTrajectory`] stores a value and a derivative sample per grid node
//! and reconstructs the signal on each interval with the quadratic matching
//! the left node's value and slope and the right node's value. Times before
//! the grid are delegated to a history function, times after the grid return
//! the terminal value.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use thiserror::Error;

/// Errors raised by grid and trajectory construction or combination.
#[derive(Debug, Error)]
pub enum TrajError {
    #[error("horizon end {t_end} must exceed start {t0}")]
    EmptyHorizon { t0: f64, t_end: f64 },
    #[error("grid needs at least one interval")]
    NoIntervals,
    #[error("expected {expected} node samples, got {got}")]
    NodeCount { expected: usize, got: usize },
    #[error("node sample {index} has dimension {got}, expected {expected}")]
    NodeDim {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("trajectories live on different grids")]
    GridMismatch,
    #[error("trajectories have dimensions {left} and {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("composite Simpson rule needs an even interval count, got {0}")]
    OddIntervals(usize),
}

/// Uniform grid of `n` intervals on `[t0, t_end]`.
///
/// The last node is pinned to `t_end` exactly rather than accumulated, so
/// `node(n) == t_end` bitwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    t0: f64,
    t_end: f64,
    n: usize,
    h: f64,
}

impl Grid {
    pub fn new(t0: f64, t_end: f64, n: usize) -> Result<Self, TrajError> {
        if !(t_end > t0) {
            return Err(TrajError::EmptyHorizon { t0, t_end });
        }
        if n == 0 {
            return Err(TrajError::NoIntervals);
        }
        let h = (t_end - t0) / n as f64;
        Ok(Self { t0, t_end, n, h })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Number of intervals (one less than the number of nodes).
    pub fn intervals(&self) -> usize {
        self.n
    }

    pub fn nodes(&self) -> usize {
        self.n + 1
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn node(&self, k: usize) -> f64 {
        debug_assert!(k <= self.n);
        if k == self.n {
            self.t_end
        } else {
            self.t0 + k as f64 * self.h
        }
    }

    /// Index of the interval containing `t`, clamped to `[0, n-1]`.
    pub fn interval_of(&self, t: f64) -> usize {
        let r = ((t - self.t0) / self.h).floor();
        if r < 0.0 {
            0
        } else {
            (r as usize).min(self.n - 1)
        }
    }

    pub fn node_times(&self) -> Vec<f64> {
        (0..=self.n).map(|k| self.node(k)).collect()
    }
}

/// Signal values on times before the grid start.
#[derive(Clone)]
pub enum History {
    /// Constant vector on `[start, t0]`.
    Constant { value: DVector<f64>, start: f64 },
    /// Arbitrary function of time on `[start, t0]`.
    Func {
        f: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
        start: f64,
    },
}

impl History {
    pub fn constant(value: DVector<f64>, start: f64) -> Self {
        History::Constant { value, start }
    }

    pub fn zero(dim: usize, start: f64) -> Self {
        History::Constant {
            value: DVector::zeros(dim),
            start,
        }
    }

    pub fn func<F>(f: F, start: f64) -> Self
    where
        F: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        History::Func {
            f: Arc::new(f),
            start,
        }
    }

    pub fn start(&self) -> f64 {
        match self {
            History::Constant { start, .. } | History::Func { start, .. } => *start,
        }
    }

    /// Panics when `t` lies below the history domain.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        assert!(
            t >= self.start(),
            "time {t} below history domain start {}",
            self.start()
        );
        match self {
            History::Constant { value, .. } => value.clone(),
            History::Func { f, .. } => f(t),
        }
    }
}

impl fmt::Debug for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            History::Constant { value, start } => f
                .debug_struct("History::Constant")
                .field("value", value)
                .field("start", start)
                .finish(),
            History::Func { start, .. } => f
                .debug_struct("History::Func")
                .field("start", start)
                .finish_non_exhaustive(),
        }
    }
}

/// Piecewise-quadratic dense output of a vector signal on a uniform grid.
///
/// On interval `[node(k), node(k+1)]` the signal is the quadratic `q` with
/// `q(0) = values[k]`, `q'(0) = slopes[k]` and `q(h) = values[k+1]`. Times
/// below the grid read the history, times above return the terminal value.
#[derive(Debug, Clone)]
pub struct DenseTrajectory {
    grid: Grid,
    dim: usize,
    values: Vec<DVector<f64>>,
    slopes: Vec<DVector<f64>>,
    history: History,
}

impl DenseTrajectory {
    pub fn new(
        grid: Grid,
        values: Vec<DVector<f64>>,
        slopes: Vec<DVector<f64>>,
        history: History,
    ) -> Result<Self, TrajError> {
        let expected = grid.nodes();
        if values.len() != expected {
            return Err(TrajError::NodeCount {
                expected,
                got: values.len(),
            });
        }
        if slopes.len() != expected {
            return Err(TrajError::NodeCount {
                expected,
                got: slopes.len(),
            });
        }
        let dim = values[0].len();
        for (index, v) in values.iter().chain(slopes.iter()).enumerate() {
            if v.len() != dim {
                return Err(TrajError::NodeDim {
                    index: index % expected,
                    expected: dim,
                    got: v.len(),
                });
            }
        }
        Ok(Self {
            grid,
            dim,
            values,
            slopes,
            history,
        })
    }

    /// Builds a trajectory from node values alone, taking slopes from
    /// second-order finite differences of the samples.
    pub fn from_nodes_fd(
        grid: Grid,
        values: Vec<DVector<f64>>,
        history: History,
    ) -> Result<Self, TrajError> {
        let n = grid.intervals();
        if values.len() != n + 1 {
            return Err(TrajError::NodeCount {
                expected: n + 1,
                got: values.len(),
            });
        }
        let h = grid.h();
        let mut slopes = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let d = if n == 1 {
                (&values[1] - &values[0]) / h
            } else if k == 0 {
                (-3.0 * &values[0] + 4.0 * &values[1] - &values[2]) / (2.0 * h)
            } else if k == n {
                (3.0 * &values[n] - 4.0 * &values[n - 1] + &values[n - 2]) / (2.0 * h)
            } else {
                (&values[k + 1] - &values[k - 1]) / (2.0 * h)
            };
            slopes.push(d);
        }
        Self::new(grid, values, slopes, history)
    }

    pub fn constant(grid: Grid, value: DVector<f64>, history: History) -> Self {
        let dim = value.len();
        let values = vec![value; grid.nodes()];
        let slopes = vec![DVector::zeros(dim); grid.nodes()];
        Self::new(grid, values, slopes, history).expect("constant trajectory is well-formed")
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn node_value(&self, k: usize) -> &DVector<f64> {
        &self.values[k]
    }

    pub fn node_slope(&self, k: usize) -> &DVector<f64> {
        &self.slopes[k]
    }

    pub fn node_values(&self) -> &[DVector<f64>] {
        &self.values
    }

    /// Evaluates the trajectory at `t`.
    ///
    /// Panics when `t` lies below the history domain.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        if t >= self.grid.t_end {
            return self.values[self.grid.intervals()].clone();
        }
        if t < self.grid.t0 {
            return self.history.eval(t);
        }
        // Exact node hit: reproduce the stored sample bitwise.
        let r = ((t - self.grid.t0) / self.grid.h).round();
        if r >= 0.0 {
            let k = r as usize;
            if k <= self.grid.intervals() && self.grid.node(k) == t {
                return self.values[k].clone();
            }
        }
        let k = self.grid.interval_of(t);
        interval_quadratic(
            &self.values[k],
            &self.slopes[k],
            &self.values[k + 1],
            self.grid.h,
            t - self.grid.node(k),
        )
    }
}

/// Quadratic through `(0, v0)` with slope `d0` at zero and `(h, v1)`,
/// evaluated at offset `s`.
pub(crate) fn interval_quadratic(
    v0: &DVector<f64>,
    d0: &DVector<f64>,
    v1: &DVector<f64>,
    h: f64,
    s: f64,
) -> DVector<f64> {
    let c2 = (v1 - v0 - d0 * h) / (h * h);
    v0 + d0 * s + c2 * (s * s)
}

/// Node-sampled C⁰ distance: max over grid nodes of the ∞-norm difference.
pub fn sup_norm_diff(a: &DenseTrajectory, b: &DenseTrajectory) -> Result<f64, TrajError> {
    if a.grid != b.grid {
        return Err(TrajError::GridMismatch);
    }
    if a.dim != b.dim {
        return Err(TrajError::DimMismatch {
            left: a.dim,
            right: b.dim,
        });
    }
    let mut worst: f64 = 0.0;
    for (va, vb) in a.values.iter().zip(&b.values) {
        worst = worst.max((va - vb).amax());
    }
    Ok(worst)
}

/// Composite Simpson rule over node samples with uniform spacing `h`.
///
/// The sample count must cover an even number of intervals.
pub fn simpson(samples: &[DVector<f64>], h: f64) -> Result<DVector<f64>, TrajError> {
    let n = samples
        .len()
        .checked_sub(1)
        .ok_or(TrajError::NoIntervals)?;
    if n == 0 {
        return Err(TrajError::NoIntervals);
    }
    if n % 2 != 0 {
        return Err(TrajError::OddIntervals(n));
    }
    let mut acc = samples[0].clone();
    for (k, s) in samples.iter().enumerate().take(n).skip(1) {
        acc += s * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc += &samples[n];
    Ok(acc * (h / 3.0))
}

/// Scalar convenience wrapper over [`simpson`].
pub fn simpson_scalar(samples: &[f64], h: f64) -> Result<f64, TrajError> {
    let vecs: Vec<DVector<f64>> = samples.iter().map(|&s| DVector::from_element(1, s)).collect();
    simpson(&vecs, h).map(|v| v[0])
}
