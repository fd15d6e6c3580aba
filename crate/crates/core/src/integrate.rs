//! Fixed-step RK4 propagation of the state, the costate (adjoint equation),
//! first-order variations and the state-transition matrix.
//!
//! All solves run on a [`TimeGrid`] that contains every sampling time of the
//! control, so no RK4 step straddles a control discontinuity.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::io::{indexed_header, read_table, write_table};
use crate::partition::{ControlSignal, Partition};
use crate::problem::OcpProblem;

/// Default number of steps across the horizon (`h_max = T / 1024`).
pub const DEFAULT_STEPS: usize = 1024;
/// Every sampling interval is split into at least this many steps.
pub const MIN_STEPS_PER_INTERVAL: usize = 4;
/// States with norm above this abort the integration.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// Strictly increasing integration nodes from 0 to T.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::InvalidInput("time grid must start at 0 and have at least two nodes".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("time grid must be finite and strictly increasing".into()));
        }
        Ok(Self { times })
    }

    /// Grid aligned with `partition`: each interval is split into
    /// `max(ceil(len / h_max), 4)` equal steps and every sampling time is a node.
    pub fn aligned(partition: &Partition, h_max: f64) -> Result<Self> {
        if !(h_max.is_finite() && h_max > 0.0) {
            return Err(Error::InvalidInput(format!("h_max must be > 0 (got {h_max})")));
        }
        let mut times = Vec::new();
        for i in 0..partition.intervals() {
            let (a, b) = partition.interval(i);
            let steps = (((b - a) / h_max).ceil() as usize).max(MIN_STEPS_PER_INTERVAL);
            times.extend((0..steps).map(|j| a + (b - a) * j as f64 / steps as f64));
        }
        times.push(partition.horizon());
        Self::from_times(times)
    }

    /// Aligned grid with the default resolution `h_max = T / 1024`.
    pub fn default_for(partition: &Partition) -> Result<Self> {
        Self::aligned(partition, partition.horizon() / DEFAULT_STEPS as f64)
    }

    /// Uniform grid with `steps` steps.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        Self::aligned(&Partition::uniform(1, horizon)?, horizon / steps.max(1) as f64)
    }

    /// Insert the midpoint of every step.
    pub fn refine(&self) -> Self {
        let mut times = Vec::with_capacity(2 * self.times.len() - 1);
        for w in self.times.windows(2) {
            times.push(w[0]);
            times.push(0.5 * (w[0] + w[1]));
        }
        times.push(self.horizon());
        Self { times }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }
    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }
    pub fn max_step(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Index of the node bit-equal to `t`.
    pub fn node_of(&self, t: f64) -> Option<usize> {
        self.times.binary_search_by(|s| s.total_cmp(&t)).ok()
    }

    /// Node index ranges `[start, end]` of each partition interval; fails if
    /// some sampling time is not a grid node.
    pub fn interval_nodes(&self, partition: &Partition) -> Result<Vec<(usize, usize)>> {
        if partition.horizon() != self.horizon() {
            return Err(Error::MisalignedGrid(format!(
                "grid ends at {} but the partition at {}",
                self.horizon(),
                partition.horizon()
            )));
        }
        let nodes = partition
            .times()
            .iter()
            .map(|&t| {
                self.node_of(t)
                    .ok_or_else(|| Error::MisalignedGrid(format!("sampling time {t} is not a grid node")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(nodes.windows(2).map(|w| (w[0], w[1])).collect())
    }

    pub(crate) fn step_of(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s <= t);
        k.saturating_sub(1).min(self.steps() - 1)
    }
}

/// Node values plus per-step end slopes, evaluated densely by cubic Hermite
/// interpolation. Slopes are stored per step so derivative jumps at sampling
/// times are represented exactly.
#[derive(Debug, Clone)]
pub struct DensePath {
    grid: TimeGrid,
    values: Vec<DVector<f64>>,
    slopes: Vec<(DVector<f64>, DVector<f64>)>,
}

impl DensePath {
    pub(crate) fn new(grid: TimeGrid, values: Vec<DVector<f64>>, slopes: Vec<(DVector<f64>, DVector<f64>)>) -> Self {
        debug_assert_eq!(values.len(), grid.times.len());
        debug_assert_eq!(slopes.len(), grid.steps());
        Self { grid, values, slopes }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }
    pub fn node(&self, k: usize) -> &DVector<f64> {
        &self.values[k]
    }
    pub fn first(&self) -> &DVector<f64> {
        &self.values[0]
    }
    pub fn last(&self) -> &DVector<f64> {
        &self.values[self.values.len() - 1]
    }
    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Hermite value inside step `k`.
    pub fn eval_in_step(&self, k: usize, t: f64) -> DVector<f64> {
        let (a, b) = (self.grid.times[k], self.grid.times[k + 1]);
        let h = b - a;
        let s = (t - a) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let (m0, m1) = &self.slopes[k];
        &self.values[k] * h00 + m0 * (h10 * h) + &self.values[k + 1] * h01 + m1 * (h11 * h)
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let t = t.clamp(0.0, self.grid.horizon());
        if let Some(k) = self.grid.node_of(t) {
            return self.values[k].clone();
        }
        self.eval_in_step(self.grid.step_of(t), t)
    }

    /// Largest `|a(t) - b(t)|` over the nodes of `grid`.
    pub fn sup_distance(&self, other: &DensePath, grid: &[f64]) -> f64 {
        grid.iter().map(|&t| (self.eval(t) - other.eval(t)).norm()).fold(0.0, f64::max)
    }
}

/// State trajectory together with the accumulated running cost.
#[derive(Debug, Clone)]
pub struct Trajectory {
    path: DensePath,
    running_cost: Vec<f64>,
}

impl Trajectory {
    pub fn path(&self) -> &DensePath {
        &self.path
    }
    pub fn grid(&self) -> &TimeGrid {
        &self.path.grid
    }
    pub fn states(&self) -> &[DVector<f64>] {
        &self.path.values
    }
    pub fn eval(&self, t: f64) -> DVector<f64> {
        self.path.eval(t)
    }
    pub fn final_state(&self) -> &DVector<f64> {
        self.path.last()
    }
    /// `int_0^{t_k} L` at every node.
    pub fn running_cost(&self) -> &[f64] {
        &self.running_cost
    }
    /// Total cost `int_0^T L(x, u, t) dt`.
    pub fn cost(&self) -> f64 {
        self.running_cost[self.running_cost.len() - 1]
    }

    /// Rebuild from node samples (e.g. read from CSV): slopes come from the
    /// dynamics and the running cost from Simpson's rule on each step.
    pub fn from_samples(prob: &OcpProblem, u: &dyn ControlSignal, grid: TimeGrid, states: Vec<DVector<f64>>) -> Result<Self> {
        if states.len() != grid.times.len() || states.iter().any(|x| x.len() != prob.state_dim()) {
            return Err(Error::InvalidInput(
                "state samples do not match the grid or the state dimension".into(),
            ));
        }
        let t = &grid.times;
        let slopes: Vec<_> = (0..grid.steps())
            .map(|k| {
                let (a, b) = (t[k], t[k + 1]);
                (
                    prob.f(&states[k], &u.value_in_step(a, a, b), a),
                    prob.f(&states[k + 1], &u.value_in_step(b, a, b), b),
                )
            })
            .collect();
        let path = DensePath::new(grid, states, slopes);
        let mut running_cost = vec![0.0];
        for k in 0..path.grid.steps() {
            let (a, b) = (path.grid.times[k], path.grid.times[k + 1]);
            let mid = 0.5 * (a + b);
            let la = prob.cost(&path.values[k], &u.value_in_step(a, a, b), a);
            let lm = prob.cost(&path.eval_in_step(k, mid), &u.value_in_step(mid, a, b), mid);
            let lb = prob.cost(&path.values[k + 1], &u.value_in_step(b, a, b), b);
            running_cost.push(running_cost[k] + (b - a) / 6.0 * (la + 4.0 * lm + lb));
        }
        Ok(Self { path, running_cost })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n = self.path.dim();
        let rows = self.path.grid.times.iter().zip(&self.path.values).map(|(t, x)| {
            let mut row = vec![*t];
            row.extend(x.iter());
            row
        });
        write_table(path, &indexed_header("t", "x", n), rows)
    }

    /// Read `(grid, states)` from a `t,x_0,...` CSV.
    pub fn read_csv(path: &Path, n: usize) -> Result<(TimeGrid, Vec<DVector<f64>>)> {
        let rows = read_table(path, &indexed_header("t", "x", n))?;
        let times = rows.iter().map(|r| r[0]).collect();
        let grid = TimeGrid::from_times(times).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        Ok((grid, rows.iter().map(|r| DVector::from_column_slice(&r[1..])).collect()))
    }
}

/// Costate `p` on a grid together with the abnormality multiplier `p0 <= 0`.
#[derive(Debug, Clone)]
pub struct CostateTrajectory {
    path: DensePath,
    p0: f64,
}

impl CostateTrajectory {
    pub fn path(&self) -> &DensePath {
        &self.path
    }
    pub fn grid(&self) -> &TimeGrid {
        &self.path.grid
    }
    pub fn p0(&self) -> f64 {
        self.p0
    }
    pub fn eval(&self, t: f64) -> DVector<f64> {
        self.path.eval(t)
    }
    pub fn values(&self) -> &[DVector<f64>] {
        &self.path.values
    }
    pub fn terminal(&self) -> &DVector<f64> {
        self.path.last()
    }

    /// Multiply `(p, p0)` by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        assert!(factor > 0.0);
        let values = self.path.values.iter().map(|p| p * factor).collect();
        let slopes = self.path.slopes.iter().map(|(a, b)| (a * factor, b * factor)).collect();
        Self {
            path: DensePath::new(self.path.grid.clone(), values, slopes),
            p0: self.p0 * factor,
        }
    }

    /// Rebuild from node samples; slopes come from the adjoint equation along
    /// `x`.
    pub fn from_samples(prob: &OcpProblem, x: &Trajectory, u: &dyn ControlSignal, p0: f64, values: Vec<DVector<f64>>) -> Result<Self> {
        check_pair(values.last().map(|p| p.norm()).unwrap_or(0.0), p0)?;
        let grid = x.grid().clone();
        if values.len() != grid.times.len() || values.iter().any(|p| p.len() != prob.state_dim()) {
            return Err(Error::InvalidInput("costate samples do not match the state grid".into()));
        }
        let t = &grid.times;
        let slopes = (0..grid.steps())
            .map(|k| {
                let (a, b) = (t[k], t[k + 1]);
                (
                    adjoint_rhs(prob, x.path.node(k), &u.value_in_step(a, a, b), &values[k], p0, a),
                    adjoint_rhs(prob, x.path.node(k + 1), &u.value_in_step(b, a, b), &values[k + 1], p0, b),
                )
            })
            .collect();
        Ok(Self {
            path: DensePath::new(grid, values, slopes),
            p0,
        })
    }

    pub fn csv_header(n: usize) -> Vec<String> {
        let mut h = indexed_header("t", "p", n);
        h.push("p0".into());
        h
    }

    /// Write as `t,p_0,...,p_{n-1},p0`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n = self.path.dim();
        let rows = self.path.grid.times.iter().zip(&self.path.values).map(|(t, p)| {
            let mut row = vec![*t];
            row.extend(p.iter());
            row.push(self.p0);
            row
        });
        write_table(path, &Self::csv_header(n), rows)
    }

    /// Read `(times, costates, p0)` from a costate CSV.
    pub fn read_csv(path: &Path, n: usize) -> Result<(Vec<f64>, Vec<DVector<f64>>, f64)> {
        let name = path.display().to_string();
        let rows = read_table(path, &Self::csv_header(n))?;
        if rows.is_empty() {
            return Err(Error::parse(&name, "no costate rows"));
        }
        let p0 = rows[0][n + 1];
        if rows.iter().any(|r| r[n + 1] != p0) {
            return Err(Error::parse(&name, "column p0 must be constant"));
        }
        if p0 > 0.0 {
            return Err(Error::parse(&name, "p0 must be <= 0"));
        }
        Ok((
            rows.iter().map(|r| r[0]).collect(),
            rows.iter().map(|r| DVector::from_column_slice(&r[1..=n])).collect(),
            p0,
        ))
    }
}

/// Linearized state and cost along a trajectory.
#[derive(Debug, Clone)]
pub struct Variation {
    pub w: DensePath,
    pub w0: Vec<f64>,
}

impl Variation {
    pub fn final_w(&self) -> &DVector<f64> {
        self.w.last()
    }
    pub fn final_w0(&self) -> f64 {
        self.w0[self.w0.len() - 1]
    }
}

fn check_pair(pt_norm: f64, p0: f64) -> Result<()> {
    if !(p0 <= 0.0) {
        return Err(Error::InvalidInput(format!("p0 must be <= 0 (got {p0})")));
    }
    if pt_norm == 0.0 && p0 == 0.0 {
        return Err(Error::TrivialPair);
    }
    Ok(())
}

/// Right-hand side of the adjoint equation `p' = -f_x' p - p0 L_x`.
pub fn adjoint_rhs(prob: &OcpProblem, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>, p0: f64, t: f64) -> DVector<f64> {
    -(prob.f_x(x, u, t).tr_mul(p)) - prob.cost_x(x, u, t) * p0
}

fn rk4_step<F>(rhs: &mut F, k: usize, t: f64, h: f64, y: &DVector<f64>) -> DVector<f64>
where
    F: FnMut(usize, f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = rhs(k, t, y);
    let k2 = rhs(k, t + 0.5 * h, &(y + &k1 * (0.5 * h)));
    let k3 = rhs(k, t + 0.5 * h, &(y + &k2 * (0.5 * h)));
    let k4 = rhs(k, t + h, &(y + &k3 * h));
    y + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

/// Classical RK4 over every step of `grid`, forward from `y0`. The closure
/// receives the step index so it can pick the control owning the step.
pub fn rk4_forward<F, C>(grid: &TimeGrid, y0: DVector<f64>, mut rhs: F, mut check: C) -> Result<Vec<DVector<f64>>>
where
    F: FnMut(usize, f64, &DVector<f64>) -> DVector<f64>,
    C: FnMut(usize, &DVector<f64>) -> Result<()>,
{
    let t = &grid.times;
    let mut out = Vec::with_capacity(t.len());
    check(0, &y0)?;
    out.push(y0);
    for k in 0..grid.steps() {
        let y = rk4_step(&mut rhs, k, t[k], t[k + 1] - t[k], &out[k]);
        check(k + 1, &y)?;
        out.push(y);
    }
    Ok(out)
}

/// Classical RK4 backward from the terminal value `y_end`.
pub fn rk4_backward<F, C>(grid: &TimeGrid, y_end: DVector<f64>, mut rhs: F, mut check: C) -> Result<Vec<DVector<f64>>>
where
    F: FnMut(usize, f64, &DVector<f64>) -> DVector<f64>,
    C: FnMut(usize, &DVector<f64>) -> Result<()>,
{
    let t = &grid.times;
    let steps = grid.steps();
    let mut out = vec![DVector::zeros(0); t.len()];
    check(steps, &y_end)?;
    out[steps] = y_end;
    for k in (0..steps).rev() {
        let y = rk4_step(&mut rhs, k, t[k + 1], t[k] - t[k + 1], &out[k + 1]);
        check(k, &y)?;
        out[k] = y;
    }
    Ok(out)
}

fn blowup_guard<'a>(grid: &'a TimeGrid, dims: usize) -> impl FnMut(usize, &DVector<f64>) -> Result<()> + 'a {
    move |k, y| {
        let head = y.rows(0, dims.min(y.len()));
        if head.iter().any(|v| !v.is_finite()) || head.norm() > BLOWUP_THRESHOLD {
            Err(Error::Divergence {
                node: k,
                time: grid.times[k],
            })
        } else {
            Ok(())
        }
    }
}

fn check_inputs(prob: &OcpProblem, u: &dyn ControlSignal, grid: &TimeGrid) -> Result<()> {
    if u.dim() != prob.control_dim() {
        return Err(Error::InvalidInput(format!(
            "control has dimension {} but the problem expects {}",
            u.dim(),
            prob.control_dim()
        )));
    }
    if grid.horizon() != prob.horizon() {
        return Err(Error::InvalidInput(format!(
            "grid ends at {} but the horizon is {}",
            grid.horizon(),
            prob.horizon()
        )));
    }
    Ok(())
}

/// Solve `x' = f(x, u, t)`, `x(0) = x0` and accumulate `int L` alongside.
pub fn integrate_state(prob: &OcpProblem, u: &dyn ControlSignal, grid: &TimeGrid) -> Result<Trajectory> {
    check_inputs(prob, u, grid)?;
    let n = prob.state_dim();
    let t = grid.times();
    let mut y0 = DVector::zeros(n + 1);
    y0.rows_mut(0, n).copy_from(prob.x0());
    let ys = rk4_forward(
        grid,
        y0,
        |k, s, y| {
            let x = y.rows(0, n).into_owned();
            let uk = u.value_in_step(s, t[k], t[k + 1]);
            let mut dy = DVector::zeros(n + 1);
            dy.rows_mut(0, n).copy_from(&prob.f(&x, &uk, s));
            dy[n] = prob.cost(&x, &uk, s);
            dy
        },
        blowup_guard(grid, n),
    )?;
    let states: Vec<DVector<f64>> = ys.iter().map(|y| y.rows(0, n).into_owned()).collect();
    let running_cost = ys.iter().map(|y| y[n]).collect();
    let slopes = (0..grid.steps())
        .map(|k| {
            let (a, b) = (t[k], t[k + 1]);
            (
                prob.f(&states[k], &u.value_in_step(a, a, b), a),
                prob.f(&states[k + 1], &u.value_in_step(b, a, b), b),
            )
        })
        .collect();
    Ok(Trajectory {
        path: DensePath::new(grid.clone(), states, slopes),
        running_cost,
    })
}

/// Solve the adjoint equation backward from `p(T) = p_terminal` along `x`.
pub fn integrate_costate(
    prob: &OcpProblem,
    x: &Trajectory,
    u: &dyn ControlSignal,
    p0: f64,
    p_terminal: &DVector<f64>,
) -> Result<CostateTrajectory> {
    let grid = x.grid();
    check_inputs(prob, u, grid)?;
    if p_terminal.len() != prob.state_dim() {
        return Err(Error::InvalidInput("terminal costate has the wrong dimension".into()));
    }
    check_pair(p_terminal.norm(), p0)?;
    let t = grid.times();
    let values = rk4_backward(
        grid,
        p_terminal.clone(),
        |k, s, p| {
            let (a, b) = (t[k], t[k + 1]);
            adjoint_rhs(prob, &x.path.eval_in_step(k, s), &u.value_in_step(s, a, b), p, p0, s)
        },
        blowup_guard(grid, p_terminal.len()),
    )?;
    CostateTrajectory::from_samples(prob, x, u, p0, values)
}

/// Solve `w' = f_x w + f_u v`, `w0' = <L_x, w> + <L_u, v>` from zero.
pub fn integrate_variation(prob: &OcpProblem, x: &Trajectory, u: &dyn ControlSignal, v: &dyn ControlSignal) -> Result<Variation> {
    let grid = x.grid();
    check_inputs(prob, u, grid)?;
    check_inputs(prob, v, grid)?;
    let n = prob.state_dim();
    let t = grid.times();
    let rhs_at = |k: usize, s: f64, w: &DVector<f64>, xs: &DVector<f64>| -> DVector<f64> {
        let (a, b) = (t[k], t[k + 1]);
        let uk = u.value_in_step(s, a, b);
        let vk = v.value_in_step(s, a, b);
        let mut dy = DVector::zeros(n + 1);
        dy.rows_mut(0, n)
            .copy_from(&(prob.f_x(xs, &uk, s) * w + prob.f_u(xs, &uk, s) * &vk));
        dy[n] = prob.cost_x(xs, &uk, s).dot(w) + prob.cost_u(xs, &uk, s).dot(&vk);
        dy
    };
    let ys = rk4_forward(
        grid,
        DVector::zeros(n + 1),
        |k, s, y| rhs_at(k, s, &y.rows(0, n).into_owned(), &x.path.eval_in_step(k, s)),
        blowup_guard(grid, n),
    )?;
    let ws: Vec<DVector<f64>> = ys.iter().map(|y| y.rows(0, n).into_owned()).collect();
    let slopes = (0..grid.steps())
        .map(|k| {
            (
                rhs_at(k, t[k], &ws[k], x.path.node(k)).rows(0, n).into_owned(),
                rhs_at(k, t[k + 1], &ws[k + 1], x.path.node(k + 1)).rows(0, n).into_owned(),
            )
        })
        .collect();
    Ok(Variation {
        w: DensePath::new(grid.clone(), ws, slopes),
        w0: ys.iter().map(|y| y[n]).collect(),
    })
}

/// State-transition matrix of `f_x(x(t), u(t), t)` on a grid.
///
/// Stores the forward fundamental matrix `Phi(t_k, 0)` and, from an
/// independent backward solve of `d/ds Phi(T, s) = -Phi(T, s) f_x(s)`, the
/// matrices `Phi(T, t_k)`.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    grid: TimeGrid,
    forward: Vec<DMatrix<f64>>,
    to_final: Vec<DMatrix<f64>>,
}

impl TransitionMatrix {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `Phi(t_k, t_j)` for grid nodes `k`, `j`.
    pub fn between(&self, k: usize, j: usize) -> DMatrix<f64> {
        if k == j {
            let n = self.forward[0].nrows();
            return DMatrix::identity(n, n);
        }
        let inv = self.forward[j]
            .clone()
            .lu()
            .solve(&DMatrix::identity(self.forward[j].nrows(), self.forward[j].nrows()))
            .expect("fundamental matrices are nonsingular");
        &self.forward[k] * inv
    }

    /// `Phi(T, t_j)`.
    pub fn to_final(&self, j: usize) -> &DMatrix<f64> {
        &self.to_final[j]
    }
}

/// Transition matrix along `(x, u)` on `grid` (any grid covering the
/// horizon; `x` is evaluated densely).
pub fn transition_matrix(prob: &OcpProblem, x: &Trajectory, u: &dyn ControlSignal, grid: &TimeGrid) -> Result<TransitionMatrix> {
    check_inputs(prob, u, grid)?;
    let n = prob.state_dim();
    let t = grid.times();
    let jac = |k: usize, s: f64| {
        let (a, b) = (t[k], t[k + 1]);
        prob.f_x(&x.eval(s), &u.value_in_step(s, a, b), s)
    };
    let id = DVector::from_column_slice(DMatrix::<f64>::identity(n, n).as_slice());
    let no_check = |_: usize, y: &DVector<f64>| -> Result<()> {
        if y.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Divergence { node: 0, time: f64::NAN })
        }
    };
    let fwd = rk4_forward(
        grid,
        id.clone(),
        |k, s, y| {
            let m = DMatrix::from_column_slice(n, n, y.as_slice());
            DVector::from_column_slice((jac(k, s) * m).as_slice())
        },
        no_check,
    )?;
    let bwd = rk4_backward(
        grid,
        id,
        |k, s, y| {
            let m = DMatrix::from_column_slice(n, n, y.as_slice());
            DVector::from_column_slice((-(m * jac(k, s))).as_slice())
        },
        no_check,
    )?;
    let to_mat = |v: &DVector<f64>| DMatrix::from_column_slice(n, n, v.as_slice());
    Ok(TransitionMatrix {
        grid: grid.clone(),
        forward: fwd.iter().map(to_mat).collect(),
        to_final: bwd.iter().map(to_mat).collect(),
    })
}

/// Pointwise difference `a(t) - b(t)` of two control signals.
pub struct SignalDifference<'a> {
    pub a: &'a dyn ControlSignal,
    pub b: &'a dyn ControlSignal,
}

impl ControlSignal for SignalDifference<'_> {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn value_at(&self, t: f64) -> DVector<f64> {
        self.a.value_at(t) - self.b.value_at(t)
    }
    fn value_left(&self, t: f64) -> DVector<f64> {
        self.a.value_left(t) - self.b.value_left(t)
    }
    fn breakpoints(&self) -> Vec<f64> {
        let mut v = self.a.breakpoints();
        v.extend(self.b.breakpoints());
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
    fn is_piecewise_constant(&self) -> bool {
        self.a.is_piecewise_constant() && self.b.is_piecewise_constant()
    }
    fn value_in_step(&self, t: f64, a: f64, b: f64) -> DVector<f64> {
        self.a.value_in_step(t, a, b) - self.b.value_in_step(t, a, b)
    }
}

/// `a(t) + scale * b(t)`.
pub struct SignalCombination<'a> {
    pub a: &'a dyn ControlSignal,
    pub b: &'a dyn ControlSignal,
    pub scale: f64,
}

impl ControlSignal for SignalCombination<'_> {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn value_at(&self, t: f64) -> DVector<f64> {
        self.a.value_at(t) + self.b.value_at(t) * self.scale
    }
    fn value_left(&self, t: f64) -> DVector<f64> {
        self.a.value_left(t) + self.b.value_left(t) * self.scale
    }
    fn breakpoints(&self) -> Vec<f64> {
        SignalDifference { a: self.a, b: self.b }.breakpoints()
    }
    fn is_piecewise_constant(&self) -> bool {
        self.a.is_piecewise_constant() && self.b.is_piecewise_constant()
    }
    fn value_in_step(&self, t: f64, a: f64, b: f64) -> DVector<f64> {
        self.a.value_in_step(t, a, b) + self.b.value_in_step(t, a, b) * self.scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{Interpolation, PiecewiseConstantControl, SampledControlSignal};
    use crate::problem::{build, lookup, ParamValue, ProblemConfig};
    use nalgebra::dvector;

    fn scalar_lq(a: f64, x0: f64) -> OcpProblem {
        let cfg = ProblemConfig {
            x0: Some(vec![x0]),
            ..ProblemConfig::named("lq_generic")
        }
        .with_param("A", ParamValue::Scalar(a))
        .with_param("B", ParamValue::Scalar(1.0));
        build(&cfg).unwrap()
    }

    fn constant(p: &OcpProblem, v: f64, n: usize) -> PiecewiseConstantControl {
        PiecewiseConstantControl::constant(
            Partition::uniform(n, p.horizon()).unwrap(),
            DVector::from_element(p.control_dim(), v),
        )
        .unwrap()
    }

    #[test]
    fn aligned_grid_contains_sampling_times() {
        let p = Partition::new(vec![0.0, 0.013, 0.5, 0.77, 1.0]).unwrap();
        let g = TimeGrid::aligned(&p, 0.01).unwrap();
        assert!(g.max_step() <= 0.01 + 1e-15);
        let ranges = g.interval_nodes(&p).unwrap();
        assert_eq!(ranges.len(), 4);
        assert!(ranges.iter().all(|(a, b)| b - a >= MIN_STEPS_PER_INTERVAL));
        assert_eq!(g.times()[0], 0.0);
        assert_eq!(g.horizon(), 1.0);
        let other = Partition::new(vec![0.0, 0.3, 1.0]).unwrap();
        assert!(matches!(g.interval_nodes(&other), Err(Error::MisalignedGrid(_))));
    }

    #[test]
    fn constant_rate_is_integrated_exactly() {
        // x' = u with u = 1, x0 = 0
        let p = scalar_lq(0.0, 0.0);
        let u = constant(&p, 1.0, 1);
        let grid = TimeGrid::default_for(u.partition()).unwrap();
        let x = integrate_state(&p, &u, &grid).unwrap();
        assert_eq!(x.final_state()[0], 1.0);
        assert_eq!(x.states()[0][0], 0.0);
    }

    #[test]
    fn exponential_growth() {
        let p = scalar_lq(1.0, 1.0);
        let u = constant(&p, 0.0, 1);
        let grid = TimeGrid::uniform(1.0, 64).unwrap();
        let x = integrate_state(&p, &u, &grid).unwrap();
        assert!((x.final_state()[0] - std::f64::consts::E).abs() < 1e-8);
        // dense output between nodes
        assert!((x.eval(0.503)[0] - 0.503f64.exp()).abs() < 1e-8);
        // running cost: int (x^2 + u^2)/2 = (e^2 - 1)/4
        let exact = (std::f64::consts::E.powi(2) - 1.0) / 4.0;
        assert!((x.cost() - exact).abs() < 1e-8);
    }

    #[test]
    fn double_integrator_matches_closed_form_zero_order_hold() {
        let p = lookup("lq_double_integrator").unwrap().build_default().unwrap();
        let part = Partition::uniform(4, 1.0).unwrap();
        let values = vec![dvector![-3.0], dvector![1.5], dvector![0.25], dvector![2.0]];
        let u = PiecewiseConstantControl::new(part.clone(), values.clone()).unwrap();
        let x = integrate_state(&p, &u, &TimeGrid::default_for(&part).unwrap()).unwrap();
        // x1 <- x1 + h x2 + h^2 u / 2, x2 <- x2 + h u
        let (mut x1, mut x2) = (1.0, 0.0);
        for v in &values {
            let h = 0.25;
            x1 += h * x2 + 0.5 * h * h * v[0];
            x2 += h * v[0];
        }
        assert!((x.final_state() - dvector![x1, x2]).norm() < 1e-10);
    }

    #[test]
    fn blowup_is_reported() {
        let p = scalar_lq(60.0, 1.0);
        let u = constant(&p, 0.0, 1);
        let err = integrate_state(&p, &u, &TimeGrid::uniform(1.0, 256).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn costate_examples() {
        // f_x = 0 and L_x = 0: constant costate
        let cubic = lookup("cubic_counterexample").unwrap().build_default().unwrap();
        let u = constant(&cubic, 0.3, 2);
        let grid = TimeGrid::default_for(u.partition()).unwrap();
        let x = integrate_state(&cubic, &u, &grid).unwrap();
        let p = integrate_costate(&cubic, &x, &u, -1.0, &dvector![0.7]).unwrap();
        assert!(p.values().iter().all(|v| v[0] == 0.7));

        // abnormal scalar linear adjoint
        let a = 0.8;
        let lin = scalar_lq(a, 1.0);
        let u = constant(&lin, 0.0, 1);
        let grid = TimeGrid::uniform(1.0, 128).unwrap();
        let x = integrate_state(&lin, &u, &grid).unwrap();
        let p = integrate_costate(&lin, &x, &u, 0.0, &dvector![2.0]).unwrap();
        for (t, v) in grid.times().iter().zip(p.values()) {
            assert!((v[0] - 2.0 * (a * (1.0 - t)).exp()).abs() < 1e-8);
        }

        assert!(matches!(
            integrate_costate(&lin, &x, &u, 0.0, &dvector![0.0]),
            Err(Error::TrivialPair)
        ));
        assert!(integrate_costate(&lin, &x, &u, 0.5, &dvector![1.0]).is_err());
    }

    #[test]
    fn variation_examples() {
        let p = scalar_lq(0.0, 0.0);
        let u = constant(&p, 0.4, 4);
        let grid = TimeGrid::default_for(u.partition()).unwrap();
        let x = integrate_state(&p, &u, &grid).unwrap();
        let zero = constant(&p, 0.0, 4);
        let var = integrate_variation(&p, &x, &u, &zero).unwrap();
        assert!(var.w.values().iter().all(|w| w[0] == 0.0));
        assert!(var.w0.iter().all(|w| *w == 0.0));

        let one = constant(&p, 1.0, 4);
        let var = integrate_variation(&p, &x, &u, &one).unwrap();
        for (t, w) in grid.times().iter().zip(var.w.values()) {
            assert!((w[0] - t).abs() < 1e-14);
        }
    }

    #[test]
    fn transition_matrix_constant_coefficients() {
        let cfg = ProblemConfig {
            x0: Some(vec![1.0, 0.0]),
            ..ProblemConfig::named("lq_generic")
        }
        .with_param("A", ParamValue::List(vec![-0.5, 2.0, -1.0, 0.3]))
        .with_param("B", ParamValue::List(vec![0.0, 1.0]));
        let p = build(&cfg).unwrap();
        let u = constant(&p, 0.2, 2);
        let grid = TimeGrid::default_for(u.partition()).unwrap();
        let x = integrate_state(&p, &u, &grid).unwrap();
        let phi = transition_matrix(&p, &x, &u, &grid).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[-0.5, 2.0, -1.0, 0.3]);
        assert_eq!(phi.between(17, 17), DMatrix::identity(2, 2));
        let t = grid.times();
        for (k, j) in [(100, 10), (1024, 0), (700, 699)] {
            let exact = crate::linalg::expm(&(&a * (t[k] - t[j])));
            assert!((phi.between(k, j) - &exact).abs().max() < 1e-8);
        }
        for j in [0, 333, 1024] {
            let exact = crate::linalg::expm(&(&a * (1.0 - t[j])));
            assert!((phi.to_final(j) - exact).abs().max() < 1e-8);
        }
    }

    fn pendulum_final(steps_per_unit: usize) -> DVector<f64> {
        let p = lookup("affine_quadratic").unwrap().build_default().unwrap();
        let u = SampledControlSignal::from_fn(vec![0.0, 1.0], Interpolation::PiecewiseLinear, |t| dvector![1.0 - 3.0 * t]).unwrap();
        let grid = TimeGrid::uniform(1.0, steps_per_unit).unwrap();
        integrate_state(&p, &u, &grid).unwrap().final_state().clone()
    }

    #[test]
    fn rk4_is_fourth_order() {
        let reference = pendulum_final(640);
        let e1 = (pendulum_final(16) - &reference).norm();
        let e2 = (pendulum_final(32) - &reference).norm();
        let ratio = e1 / e2;
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn aligned_grids_do_not_lose_order_at_sampling_times() {
        let p = lookup("affine_quadratic").unwrap().build_default().unwrap();
        let part = Partition::new(vec![0.0, 0.3, 0.45, 1.0]).unwrap();
        let u = PiecewiseConstantControl::new(part.clone(), vec![dvector![2.0], dvector![-4.0], dvector![1.0]]).unwrap();
        let coarse = TimeGrid::aligned(&part, 1.0 / 32.0).unwrap();
        let fine = coarse.refine();
        let finer = fine.refine();
        let xc = integrate_state(&p, &u, &coarse).unwrap();
        let xf = integrate_state(&p, &u, &fine).unwrap();
        let xff = integrate_state(&p, &u, &finer).unwrap();
        let d1 = (xc.final_state() - xf.final_state()).norm();
        let d2 = (xf.final_state() - xff.final_state()).norm();
        let h = coarse.max_step();
        assert!(d1 <= 10.0 * h.powi(4), "{d1}");
        assert!(d1 / d2 > 12.0, "{}", d1 / d2);
    }

    #[test]
    fn csv_round_trip_rebuilds_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = lookup("affine_quadratic").unwrap().build_default().unwrap();
        let u = PiecewiseConstantControl::new(Partition::uniform(2, 1.0).unwrap(), vec![dvector![1.0], dvector![-1.0]]).unwrap();
        let grid = TimeGrid::default_for(u.partition()).unwrap();
        let x = integrate_state(&p, &u, &grid).unwrap();
        let costate = integrate_costate(&p, &x, &u, -1.0, &dvector![0.5, -0.25]).unwrap();
        x.write_csv(&dir.path().join("state.csv")).unwrap();
        costate.write_csv(&dir.path().join("costate.csv")).unwrap();

        let (g, states) = Trajectory::read_csv(&dir.path().join("state.csv"), 2).unwrap();
        assert_eq!(&g, &grid);
        let x2 = Trajectory::from_samples(&p, &u, g, states).unwrap();
        assert!((x2.cost() - x.cost()).abs() < 1e-10);
        assert!((x2.eval(0.3) - x.eval(0.3)).norm() < 1e-15);
        let (_, ps, p0) = CostateTrajectory::read_csv(&dir.path().join("costate.csv"), 2).unwrap();
        assert_eq!(p0, -1.0);
        let c2 = CostateTrajectory::from_samples(&p, &x2, &u, p0, ps).unwrap();
        assert!((c2.eval(0.77) - costate.eval(0.77)).norm() < 1e-15);
    }
}
