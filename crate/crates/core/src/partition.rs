//! Time partitions, piecewise-constant controls and the interval-averaging
//! operator that maps a general control onto a partition.

use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::io::{read_table, write_table};
use crate::problem::ControlSet;

/// Sampling times `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    times: Vec<f64>,
}

impl Partition {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidInput("a partition needs at least two times".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidInput(format!("partition must start at 0 (got {})", times[0])));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("partition times must be finite".into()));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(format!(
                "partition times must be strictly increasing ({} followed by {})",
                w[0], w[1]
            )));
        }
        Ok(Self { times })
    }

    /// `t_i = i T / N`.
    pub fn uniform(intervals: usize, horizon: f64) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::InvalidInput("uniform partition needs N >= 1".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidInput(format!("horizon must be > 0 (got {horizon})")));
        }
        let mut times: Vec<f64> = (0..=intervals).map(|i| i as f64 * horizon / intervals as f64).collect();
        times[intervals] = horizon;
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of sampling intervals `N`.
    pub fn intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn interval(&self, i: usize) -> (f64, f64) {
        (self.times[i], self.times[i + 1])
    }

    /// Largest gap between consecutive sampling times.
    pub fn norm(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Index `i` with `t in [t_i, t_{i+1})`; `T` belongs to the last interval.
    pub fn interval_of(&self, t: f64) -> usize {
        let n = self.intervals();
        // first index with times[k] > t, minus one
        let k = self.times.partition_point(|&s| s <= t);
        k.saturating_sub(1).min(n - 1)
    }

    /// Split every interval in two at its midpoint.
    pub fn refine_dyadic(&self) -> Self {
        let mut times = Vec::with_capacity(2 * self.times.len() - 1);
        for w in self.times.windows(2) {
            times.push(w[0]);
            times.push(0.5 * (w[0] + w[1]));
        }
        times.push(self.horizon());
        Self { times }
    }

    /// True if every time of `coarser` is a time of `self`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        self.horizon() == coarser.horizon()
            && coarser
                .times
                .iter()
                .all(|t| self.times.binary_search_by(|s| s.total_cmp(t)).is_ok())
    }
}

/// Anything that can drive the dynamics: a control defined on `[0, T]`.
///
/// Values are right-continuous; `value_left` gives left limits so that
/// integrators can evaluate the last stage of a step without crossing a
/// breakpoint.
pub trait ControlSignal: Sync {
    fn dim(&self) -> usize;
    fn value_at(&self, t: f64) -> DVector<f64>;
    fn value_left(&self, t: f64) -> DVector<f64> {
        self.value_at(t)
    }
    /// Points where the signal may fail to be smooth.
    fn breakpoints(&self) -> Vec<f64>;
    fn is_piecewise_constant(&self) -> bool;

    /// Value used by a stage at time `t` of an integration step `[a, b]`.
    fn value_in_step(&self, t: f64, _a: f64, b: f64) -> DVector<f64> {
        if t < b {
            self.value_at(t)
        } else {
            self.value_left(b)
        }
    }
}

/// Control constant on each interval of a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstantControl {
    partition: Partition,
    values: Vec<DVector<f64>>,
}

impl PiecewiseConstantControl {
    pub fn new(partition: Partition, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.len() != partition.intervals() {
            return Err(Error::InvalidInput(format!(
                "expected {} control values, got {}",
                partition.intervals(),
                values.len()
            )));
        }
        let m = values[0].len();
        if m == 0 || values.iter().any(|v| v.len() != m || v.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidInput(
                "control values must be finite with a common positive dimension".into(),
            ));
        }
        Ok(Self { partition, values })
    }

    pub fn constant(partition: Partition, value: DVector<f64>) -> Result<Self> {
        let values = vec![value; partition.intervals()];
        Self::new(partition, values)
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &DVector<f64> {
        &self.values[i]
    }

    pub fn set_value(&mut self, i: usize, v: DVector<f64>) {
        assert_eq!(v.len(), self.values[i].len());
        self.values[i] = v;
    }

    /// True when every value lies in `set` (within `tol`).
    pub fn lies_in(&self, set: &ControlSet, tol: f64) -> bool {
        self.values.iter().all(|v| set.contains(v, tol))
    }

    /// Re-express the control on a finer partition (value of the coarse
    /// interval containing each fine interval's midpoint).
    pub fn resample_onto(&self, finer: &Partition) -> Self {
        let values = (0..finer.intervals())
            .map(|i| {
                let (a, b) = finer.interval(i);
                self.values[self.partition.interval_of(0.5 * (a + b))].clone()
            })
            .collect();
        Self {
            partition: finer.clone(),
            values,
        }
    }

    pub fn csv_header(m: usize) -> Vec<String> {
        let mut h = vec!["t_start".to_string(), "t_end".to_string()];
        h.extend((0..m).map(|i| format!("u_{i}")));
        h
    }

    /// Write as `t_start,t_end,u_0,...,u_{m-1}`, one row per interval.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows = self.values.iter().enumerate().map(|(i, v)| {
            let (a, b) = self.partition.interval(i);
            let mut row = vec![a, b];
            row.extend(v.iter());
            row
        });
        write_table(path, &Self::csv_header(self.dim()), rows)
    }

    pub fn read_csv(path: &Path, m: usize) -> Result<Self> {
        let name = path.display().to_string();
        let rows = read_table(path, &Self::csv_header(m))?;
        if rows.is_empty() {
            return Err(Error::parse(&name, "no control intervals"));
        }
        let mut times = vec![rows[0][0]];
        let mut values = Vec::with_capacity(rows.len());
        for (k, row) in rows.iter().enumerate() {
            if row[0] != *times.last().unwrap() {
                return Err(Error::parse(&name, format!("line {}: intervals are not contiguous", k + 2)));
            }
            times.push(row[1]);
            values.push(DVector::from_column_slice(&row[2..]));
        }
        let partition = Partition::new(times).map_err(|e| Error::parse(&name, e.to_string()))?;
        Self::new(partition, values)
    }
}

impl ControlSignal for PiecewiseConstantControl {
    fn dim(&self) -> usize {
        self.values[0].len()
    }
    fn value_at(&self, t: f64) -> DVector<f64> {
        self.values[self.partition.interval_of(t)].clone()
    }
    fn value_left(&self, t: f64) -> DVector<f64> {
        let k = self.partition.times.partition_point(|&s| s < t);
        self.values[k.saturating_sub(1).min(self.values.len() - 1)].clone()
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.partition.times.clone()
    }
    fn is_piecewise_constant(&self) -> bool {
        true
    }
    fn value_in_step(&self, _t: f64, a: f64, b: f64) -> DVector<f64> {
        // grids are partition-aligned, so the step midpoint identifies the
        // interval owning the step's left endpoint
        self.values[self.partition.interval_of(0.5 * (a + b))].clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    PiecewiseConstant,
    PiecewiseLinear,
}

/// A general control represented on an explicit grid.
///
/// With [`Interpolation::PiecewiseConstant`] the value on `[g_k, g_{k+1})`
/// is `values[k]`; the last value only matters at the final grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledControlSignal {
    grid: Vec<f64>,
    values: Vec<DVector<f64>>,
    interpolation: Interpolation,
}

impl SampledControlSignal {
    pub fn new(grid: Vec<f64>, values: Vec<DVector<f64>>, interpolation: Interpolation) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(Error::InvalidInput("signal needs >= 2 grid points and one value per point".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("signal grid must be finite and strictly increasing".into()));
        }
        let m = values[0].len();
        if m == 0 || values.iter().any(|v| v.len() != m || v.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidInput(
                "signal values must be finite with a common positive dimension".into(),
            ));
        }
        Ok(Self {
            grid,
            values,
            interpolation,
        })
    }

    /// Sample `f` on `grid`.
    pub fn from_fn<F: Fn(f64) -> DVector<f64>>(grid: Vec<f64>, interpolation: Interpolation, f: F) -> Result<Self> {
        let values = grid.iter().map(|&t| f(t)).collect();
        Self::new(grid, values, interpolation)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }
    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn covers(&self, horizon: f64) -> bool {
        self.grid[0] <= 0.0 && *self.grid.last().unwrap() >= horizon
    }

    fn segment_of(&self, t: f64) -> usize {
        let k = self.grid.partition_point(|&s| s <= t);
        k.saturating_sub(1).min(self.grid.len() - 2)
    }

    /// Exact integral of the interpolant over `[a, b]` (inside the grid).
    pub fn integral(&self, a: f64, b: f64) -> DVector<f64> {
        let mut total = DVector::zeros(self.dim());
        let first = self.segment_of(a);
        for k in first..self.grid.len() - 1 {
            let (g0, g1) = (self.grid[k], self.grid[k + 1]);
            if g0 >= b {
                break;
            }
            let lo = a.max(g0);
            let hi = b.min(g1);
            if hi <= lo {
                continue;
            }
            match self.interpolation {
                Interpolation::PiecewiseConstant => total += &self.values[k] * (hi - lo),
                Interpolation::PiecewiseLinear => {
                    let va = self.lerp(k, lo);
                    let vb = self.lerp(k, hi);
                    total += (va + vb) * (0.5 * (hi - lo));
                }
            }
        }
        total
    }

    fn lerp(&self, k: usize, t: f64) -> DVector<f64> {
        let (g0, g1) = (self.grid[k], self.grid[k + 1]);
        let s = (t - g0) / (g1 - g0);
        &self.values[k] * (1.0 - s) + &self.values[k + 1] * s
    }
}

impl ControlSignal for SampledControlSignal {
    fn dim(&self) -> usize {
        self.values[0].len()
    }
    fn value_at(&self, t: f64) -> DVector<f64> {
        let last = self.grid.len() - 1;
        if t >= self.grid[last] {
            return self.values[last].clone();
        }
        let k = self.segment_of(t);
        match self.interpolation {
            Interpolation::PiecewiseConstant => self.values[k].clone(),
            Interpolation::PiecewiseLinear => self.lerp(k, t.max(self.grid[0])),
        }
    }
    fn value_left(&self, t: f64) -> DVector<f64> {
        match self.interpolation {
            Interpolation::PiecewiseLinear => self.value_at(t),
            Interpolation::PiecewiseConstant => {
                let k = self.grid.partition_point(|&s| s < t);
                self.values[k.saturating_sub(1).min(self.values.len() - 2)].clone()
            }
        }
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.grid.clone()
    }
    fn is_piecewise_constant(&self) -> bool {
        self.interpolation == Interpolation::PiecewiseConstant
    }
}

impl From<&PiecewiseConstantControl> for SampledControlSignal {
    fn from(u: &PiecewiseConstantControl) -> Self {
        let mut values = u.values.clone();
        values.push(u.values.last().unwrap().clone());
        Self {
            grid: u.partition.times.clone(),
            values,
            interpolation: Interpolation::PiecewiseConstant,
        }
    }
}

/// Interval averages of `u` over `partition`, computed segment-exactly.
/// Values in a convex set stay in it, since each average is a convex
/// combination of the signal's values.
pub fn average_onto(u: &SampledControlSignal, partition: &Partition) -> Result<PiecewiseConstantControl> {
    if !u.covers(partition.horizon()) {
        return Err(Error::InvalidInput(format!(
            "signal grid [{}, {}] does not cover [0, {}]",
            u.grid[0],
            u.grid.last().unwrap(),
            partition.horizon()
        )));
    }
    let values = (0..partition.intervals())
        .map(|i| {
            let (a, b) = partition.interval(i);
            u.integral(a, b) / (b - a)
        })
        .collect();
    PiecewiseConstantControl::new(partition.clone(), values)
}

fn merged_breakpoints(a: &dyn ControlSignal, b: &dyn ControlSignal, lo: f64, hi: f64) -> Vec<f64> {
    let mut pts: Vec<f64> = a
        .breakpoints()
        .into_iter()
        .chain(b.breakpoints())
        .filter(|t| *t > lo && *t < hi)
        .collect();
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// `integral_0^T |u(t) - v(t)| dt` with the Euclidean norm.
///
/// Piecewise-constant/linear signals are affine on every segment of the
/// merged breakpoint grid, so the integral is exact for scalar controls and
/// for piecewise-constant pairs; vector-valued affine differences fall back
/// to Gauss–Legendre on each segment.
pub fn l1_distance(u: &dyn ControlSignal, v: &dyn ControlSignal, horizon: f64) -> f64 {
    assert_eq!(u.dim(), v.dim(), "l1_distance: dimension mismatch");
    let pts = merged_breakpoints(u, v, 0.0, horizon);
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let d0 = u.value_at(a) - v.value_at(a);
        let d1 = u.value_left(b) - v.value_left(b);
        let len = b - a;
        if d0.len() == 1 {
            let (p, q) = (d0[0], d1[0]);
            total += if p * q >= 0.0 {
                0.5 * (p.abs() + q.abs()) * len
            } else {
                // sign change at the root of the affine difference
                0.5 * (p * p + q * q) / (p.abs() + q.abs()) * len
            };
        } else if d0 == d1 {
            total += d0.norm() * len;
        } else {
            total += crate::linalg::gauss_legendre(|t| (&d0 + (&d1 - &d0) * ((t - a) / len)).norm(), a, b, 8);
        }
    }
    total
}
