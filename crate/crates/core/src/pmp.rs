//! Residuals of the first-order optimality conditions along a candidate
//! extremal: adjoint equation, Hamiltonian gradient (pointwise and
//! interval-averaged), Hamiltonian maximization, and the variation-vector
//! lift inequality.
//!
//! Sign convention: `H = <p, f> + p0 L` with `p0 <= 0`; normal extremals are
//! normalized to `p0 = -1`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{
    adjoint_rhs, integrate_costate, integrate_state, integrate_variation, CostateTrajectory, SignalDifference, TimeGrid, Trajectory,
};
use crate::linalg::derivative_weights;
use crate::partition::{ControlSignal, Interpolation, Partition, PiecewiseConstantControl, SampledControlSignal};
use crate::problem::{OcpProblem, TOL_SET};

/// Residuals at or below this pass.
pub const PASS_THRESHOLD: f64 = 1e-6;
/// Residuals at or below this (but above [`PASS_THRESHOLD`]) warn.
pub const WARN_THRESHOLD: f64 = 1e-3;
/// Largest terminal-constraint violation accepted for an extremal.
pub const ADMISSIBLE_TOL: f64 = 1e-6;

pub fn hamiltonian(prob: &OcpProblem, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>, p0: f64, t: f64) -> f64 {
    p.dot(&prob.f(x, u, t)) + p0 * prob.cost(x, u, t)
}

/// `grad_u H = f_u' p + p0 L_u`.
pub fn hamiltonian_grad_u(prob: &OcpProblem, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>, p0: f64, t: f64) -> DVector<f64> {
    prob.f_u(x, u, t).tr_mul(p) + prob.cost_u(x, u, t) * p0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
}

impl Verdict {
    pub fn of(residual: f64) -> Self {
        if residual <= PASS_THRESHOLD {
            Verdict::Pass
        } else if residual <= WARN_THRESHOLD {
            Verdict::Warn
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normality {
    Normal,
    Abnormal,
}

/// Normal iff `p0 < 0`; abnormal iff `p0 = 0`, which requires `p(T) != 0`.
pub fn classify_normality(p0: f64, p_terminal: &DVector<f64>) -> Result<Normality> {
    if p0 > 0.0 || !p0.is_finite() {
        return Err(Error::InvalidInput(format!("p0 must be <= 0 (got {p0})")));
    }
    if p0 < 0.0 {
        Ok(Normality::Normal)
    } else if p_terminal.norm() > 0.0 {
        Ok(Normality::Abnormal)
    } else {
        Err(Error::TrivialPair)
    }
}

/// `int_{t_i}^{t_{i+1}} grad_u H(x(s), u_i, p(s), p0, s) ds` for every
/// sampling interval: composite Simpson on the aligned grid, Hermite midpoints.
pub fn averaged_gradient(
    prob: &OcpProblem,
    state: &Trajectory,
    costate: &CostateTrajectory,
    u: &PiecewiseConstantControl,
) -> Result<Vec<DVector<f64>>> {
    let grid = state.grid();
    let t = grid.times();
    let p0 = costate.p0();
    let ranges = grid.interval_nodes(u.partition())?;
    let g = |k: usize, s: f64, ui: &DVector<f64>| {
        let x = state.path().eval_in_step(k, s);
        let p = costate.path().eval_in_step(k, s);
        hamiltonian_grad_u(prob, &x, ui, &p, p0, s)
    };
    Ok(ranges
        .iter()
        .enumerate()
        .map(|(i, &(s, e))| {
            let ui = u.value(i);
            let mut acc = DVector::zeros(ui.len());
            for k in s..e {
                let (a, b) = (t[k], t[k + 1]);
                acc += (g(k, a, ui) + g(k, 0.5 * (a + b), ui) * 4.0 + g(k, b, ui)) * ((b - a) / 6.0);
            }
            acc
        })
        .collect())
}

/// Control carried by an extremal.
#[derive(Debug, Clone)]
pub enum ExtremalControl {
    Sampled(PiecewiseConstantControl),
    General(SampledControlSignal),
}

impl ExtremalControl {
    pub fn as_signal(&self) -> &dyn ControlSignal {
        match self {
            ExtremalControl::Sampled(u) => u,
            ExtremalControl::General(u) => u,
        }
    }

    pub fn as_sampled(&self) -> Option<&PiecewiseConstantControl> {
        match self {
            ExtremalControl::Sampled(u) => Some(u),
            ExtremalControl::General(_) => None,
        }
    }
}

/// A candidate extremal `(x, u, p, p0)`.
#[derive(Debug, Clone)]
pub struct Extremal {
    problem: OcpProblem,
    control: ExtremalControl,
    state: Trajectory,
    costate: CostateTrajectory,
}

impl Extremal {
    pub fn new(problem: OcpProblem, control: ExtremalControl, state: Trajectory, costate: CostateTrajectory) -> Result<Self> {
        if state.grid() != costate.grid() {
            return Err(Error::InvalidInput("state and costate must share a grid".into()));
        }
        classify_normality(costate.p0(), costate.terminal())?;
        if (state.states()[0].clone() - problem.x0()).norm() > 1e-12 {
            return Err(Error::Precondition("x(0) differs from x0".into()));
        }
        let feas = (state.final_state() - problem.x_target()).norm();
        if feas > ADMISSIBLE_TOL {
            return Err(Error::Precondition(format!("x(T) misses the target by {feas:e}")));
        }
        if let ExtremalControl::Sampled(u) = &control {
            state.grid().interval_nodes(u.partition())?;
        }
        Ok(Self {
            problem,
            control,
            state,
            costate,
        })
    }

    /// Integrate the state for `control`, then the costate backward from
    /// `(p_terminal, p0)`, on `grid`.
    pub fn from_control(
        problem: &OcpProblem,
        control: ExtremalControl,
        p0: f64,
        p_terminal: &DVector<f64>,
        grid: &TimeGrid,
    ) -> Result<Self> {
        let state = integrate_state(problem, control.as_signal(), grid)?;
        let costate = integrate_costate(problem, &state, control.as_signal(), p0, p_terminal)?;
        Self::new(problem.clone(), control, state, costate)
    }

    pub fn problem(&self) -> &OcpProblem {
        &self.problem
    }
    pub fn control(&self) -> &ExtremalControl {
        &self.control
    }
    pub fn state(&self) -> &Trajectory {
        &self.state
    }
    pub fn costate(&self) -> &CostateTrajectory {
        &self.costate
    }
    pub fn p0(&self) -> f64 {
        self.costate.p0()
    }
    pub fn grid(&self) -> &TimeGrid {
        self.state.grid()
    }

    /// Same extremal with `(p, p0)` multiplied by `factor > 0`.
    pub fn with_scaled_costate(&self, factor: f64) -> Self {
        Self {
            costate: self.costate.scaled(factor),
            ..self.clone()
        }
    }

    fn u_in_step(&self, k: usize, t: f64) -> DVector<f64> {
        let g = self.grid().times();
        self.control.as_signal().value_in_step(t, g[k], g[k + 1])
    }

    fn grad_h_in_step(&self, k: usize, t: f64, u: &DVector<f64>) -> DVector<f64> {
        let x = self.state.path().eval_in_step(k, t);
        let p = self.costate.path().eval_in_step(k, t);
        hamiltonian_grad_u(&self.problem, &x, u, &p, self.p0(), t)
    }

    /// Node ranges on which the control is continuous.
    fn smooth_segments(&self) -> Vec<(usize, usize)> {
        let grid = self.grid();
        let signal = self.control.as_signal();
        let jumps = if signal.is_piecewise_constant() {
            signal.breakpoints()
        } else {
            Vec::new()
        };
        let mut cuts: Vec<usize> = jumps.into_iter().filter_map(|t| grid.node_of(t)).collect();
        cuts.push(0);
        cuts.push(grid.steps());
        cuts.sort_unstable();
        cuts.dedup();
        cuts.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Per-node norm of `p' + f_x' p + p0 L_x`, with `p'` from a five-point
    /// differentiation stencil kept inside each smooth segment of the control.
    pub fn ae_profile(&self) -> Vec<f64> {
        let t = self.grid().times();
        let ps = self.costate.values();
        let mut profile = vec![0.0f64; t.len()];
        for (s, e) in self.smooth_segments() {
            let width = (e - s).min(4);
            for k in s..=e {
                let lo = k.saturating_sub(width / 2).max(s).min(e - width);
                let nodes: Vec<f64> = (lo..=lo + width).map(|j| t[j]).collect();
                let w = derivative_weights(&nodes, t[k]);
                let mut dp = DVector::zeros(ps[k].len());
                for (j, wj) in (lo..=lo + width).zip(&w) {
                    dp += (&ps[j] - &ps[k]) * *wj;
                }
                // piecewise-constant controls: the segment's value
                let step = k.min(e - 1).max(s);
                let u = if self.control.as_signal().is_piecewise_constant() {
                    self.u_in_step(step, 0.5 * (t[step] + t[step + 1]))
                } else {
                    self.u_in_step(step, t[k])
                };
                let rhs = adjoint_rhs(&self.problem, self.state.path().node(k), &u, &ps[k], self.p0(), t[k]);
                let r = (dp - rhs).norm();
                profile[k] = profile[k].max(r);
            }
        }
        profile
    }

    pub fn ae_residual(&self) -> f64 {
        self.ae_profile().into_iter().fold(0.0, f64::max)
    }

    /// Per-node `normal_cone_residual(U, u(t), grad_u H(t))`, using the
    /// control of each adjacent step.
    pub fn hg_profile(&self) -> Result<Vec<f64>> {
        let t = self.grid().times();
        let set = self.problem.control_set();
        let mut profile = vec![0.0f64; t.len()];
        for k in 0..self.grid().steps() {
            for (node, tt) in [(k, t[k]), (k + 1, t[k + 1])] {
                let u = self.u_in_step(k, tt);
                let g = hamiltonian_grad_u(
                    &self.problem,
                    self.state.path().node(node),
                    &u,
                    self.costate.path().node(node),
                    self.p0(),
                    tt,
                );
                profile[node] = profile[node].max(set.normal_cone_residual(&u, &g)?);
            }
        }
        Ok(profile)
    }

    pub fn hg_residual(&self) -> Result<f64> {
        Ok(self.hg_profile()?.into_iter().fold(0.0, f64::max))
    }

    /// `int grad_u H` over each sampling interval; see [`averaged_gradient`].
    pub fn ahg_integrals(&self) -> Result<Vec<DVector<f64>>> {
        let u = self
            .control
            .as_sampled()
            .ok_or_else(|| Error::InvalidInput("averaged gradient condition needs a piecewise-constant control".into()))?;
        averaged_gradient(&self.problem, &self.state, &self.costate, u)
    }

    /// Per-interval `normal_cone_residual(U, u_i, int grad_u H)`.
    pub fn ahg_residuals(&self) -> Result<Vec<f64>> {
        let u = self
            .control
            .as_sampled()
            .ok_or_else(|| Error::InvalidInput("averaged gradient condition needs a piecewise-constant control".into()))?;
        let set = self.problem.control_set();
        self.ahg_integrals()?
            .iter()
            .enumerate()
            .map(|(i, g)| set.normal_cone_residual(u.value(i), g))
            .collect()
    }

    /// Largest Hamiltonian gain available by moving `u(t)` within `U`,
    /// searched on a grid over `U`.
    pub fn hm_gap(&self, opts: &HmOptions) -> Result<HmGap> {
        let t = self.grid().times();
        let set = self.problem.control_set();
        let (lo, hi) = set.bounding_box();
        let m = lo.len();
        let pts = opts.points_per_dim.max(2);
        let spacing = DVector::from_fn(m, |i, _| (hi[i] - lo[i]) / (pts - 1) as f64);
        let half_diag = 0.5 * spacing.norm();
        let axis = |i: usize, j: usize| {
            if j + 1 == pts {
                hi[i]
            } else {
                lo[i] + (hi[i] - lo[i]) * j as f64 / (pts - 1) as f64
            }
        };

        let candidates: Option<Vec<DVector<f64>>> = if m <= 2 {
            let mut c = Vec::new();
            let total = pts.pow(m as u32);
            for idx in 0..total {
                let mut v = DVector::zeros(m);
                let mut r = idx;
                for i in 0..m {
                    v[i] = axis(i, r % pts);
                    r /= pts;
                }
                if set.contains(&v, 0.0) {
                    c.push(v);
                }
            }
            Some(c)
        } else {
            None
        };

        let mut out = HmGap::default();
        let stride = opts.node_stride.max(1);
        let mut nodes: Vec<usize> = (0..t.len()).step_by(stride).collect();
        if *nodes.last().unwrap() != t.len() - 1 {
            nodes.push(t.len() - 1);
        }
        for k in nodes {
            let step = k.min(self.grid().steps() - 1);
            let u = self.u_in_step(step, t[k]);
            let x = self.state.path().node(k);
            let p = self.costate.path().node(k);
            let h = |w: &DVector<f64>| hamiltonian(&self.problem, x, w, p, self.p0(), t[k]);
            let grad_norm = |w: &DVector<f64>| hamiltonian_grad_u(&self.problem, x, w, p, self.p0(), t[k]).norm();
            let h_u = h(&u);
            let mut best = h_u;
            let mut lip = grad_norm(&u);
            match &candidates {
                Some(cands) => {
                    for w in cands {
                        best = best.max(h(w));
                        lip = lip.max(grad_norm(w));
                    }
                }
                None => {
                    // coordinate-wise refinement from u(t)
                    let mut cur = u.clone();
                    for _ in 0..3 {
                        for i in 0..m {
                            for j in 0..pts {
                                let mut w = cur.clone();
                                w[i] = axis(i, j);
                                if !set.contains(&w, 0.0) {
                                    continue;
                                }
                                let hw = h(&w);
                                lip = lip.max(grad_norm(&w));
                                if hw > best {
                                    best = hw;
                                    cur = w;
                                }
                            }
                        }
                    }
                }
            }
            let raw = best - h_u;
            let slack = lip * half_diag;
            if raw > out.raw {
                out.raw = raw;
                out.worst_time = t[k];
            }
            out.slack = out.slack.max(slack);
            out.gap = out.gap.max((raw - slack).max(0.0));
        }
        Ok(out)
    }

    /// `z_v(T) = <p(T), w(T)> + p0 w0(T)` for the variation along `v - u`.
    pub fn lift_inequality(&self, v: &dyn ControlSignal) -> Result<f64> {
        let z = self.lift_path(v)?;
        Ok(z[z.len() - 1])
    }

    /// `z_v(t_k)` at every grid node.
    pub fn lift_path(&self, v: &dyn ControlSignal) -> Result<Vec<f64>> {
        let set = self.problem.control_set();
        for bp in v.breakpoints() {
            if (0.0..=self.problem.horizon()).contains(&bp) && !set.contains(&v.value_at(bp), TOL_SET) {
                return Err(Error::Precondition(format!("probe control leaves U at t = {bp}")));
            }
        }
        let dir = SignalDifference {
            a: v,
            b: self.control.as_signal(),
        };
        let var = integrate_variation(&self.problem, &self.state, self.control.as_signal(), &dir)?;
        Ok(self
            .costate
            .values()
            .iter()
            .zip(var.w.values())
            .zip(&var.w0)
            .map(|((p, w), w0)| p.dot(w) + self.p0() * w0)
            .collect())
    }

    /// Increments of `z_v` over the sampling intervals of the extremal.
    pub fn lift_increments(&self, v: &dyn ControlSignal) -> Result<Vec<f64>> {
        let u = self
            .control
            .as_sampled()
            .ok_or_else(|| Error::InvalidInput("increments need a piecewise-constant control".into()))?;
        let z = self.lift_path(v)?;
        Ok(self
            .grid()
            .interval_nodes(u.partition())?
            .iter()
            .map(|&(s, e)| z[e] - z[s])
            .collect())
    }

    /// `int_0^T <grad_u H, v - u> dt` by Simpson's rule on every step.
    pub fn lift_integral(&self, v: &dyn ControlSignal) -> f64 {
        let t = self.grid().times();
        let mut total = 0.0;
        for k in 0..self.grid().steps() {
            let (a, b) = (t[k], t[k + 1]);
            let f = |s: f64| {
                let u = self.u_in_step(k, s);
                let d = v.value_in_step(s, a, b) - &u;
                self.grad_h_in_step(k, s, &u).dot(&d)
            };
            total += (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b));
        }
        total
    }

    /// Control equal to `u` except on grid steps `[step, step + len)`, where
    /// it takes the value `omega`.
    pub fn needle(&self, step: usize, len: usize, omega: &DVector<f64>) -> Result<SampledControlSignal> {
        let t = self.grid().times();
        let values: Vec<DVector<f64>> = (0..t.len())
            .map(|k| {
                let j = k.min(self.grid().steps() - 1);
                if j >= step && j < step + len && k < self.grid().steps() {
                    omega.clone()
                } else {
                    self.u_in_step(j, 0.5 * (t[j] + t[j + 1]))
                }
            })
            .collect();
        SampledControlSignal::new(t.to_vec(), values, Interpolation::PiecewiseConstant)
    }

    /// Random probe controls valued in `U`: piecewise constant on the
    /// extremal's partition (or `fallback_intervals` uniform intervals).
    pub fn random_probes(&self, count: usize, seed: u64, fallback_intervals: usize) -> Vec<PiecewiseConstantControl> {
        let partition = match &self.control {
            ExtremalControl::Sampled(u) => u.partition().clone(),
            ExtremalControl::General(_) => {
                Partition::uniform(fallback_intervals.max(1), self.problem.horizon()).expect("horizon is positive")
            }
        };
        let set = self.problem.control_set();
        let (lo, hi) = set.bounding_box();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let values = (0..partition.intervals())
                    .map(|_| {
                        let raw = DVector::from_fn(lo.len(), |i, _| if hi[i] > lo[i] { rng.random_range(lo[i]..=hi[i]) } else { lo[i] });
                        set.project(&raw)
                    })
                    .collect();
                PiecewiseConstantControl::new(partition.clone(), values).expect("probe values are finite")
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct HmOptions {
    pub points_per_dim: usize,
    /// Check every `node_stride`-th grid node (the last node always).
    pub node_stride: usize,
}

impl Default for HmOptions {
    fn default() -> Self {
        Self {
            points_per_dim: 1001,
            node_stride: 1,
        }
    }
}

/// Result of the Hamiltonian-maximization search.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct HmGap {
    /// Largest `max_grid H - H(u(t))` over the checked nodes, minus the
    /// grid-spacing slack, clipped at zero.
    pub gap: f64,
    /// Largest gap before the slack correction.
    pub raw: f64,
    /// `Lipschitz estimate * half grid diagonal`.
    pub slack: f64,
    pub worst_time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckOptions {
    pub require_hm: bool,
    pub hm: HmOptionsSer,
    pub probes: usize,
    pub probe_seed: u64,
}

/// Serializable mirror of [`HmOptions`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HmOptionsSer {
    pub points_per_dim: usize,
    pub node_stride: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            require_hm: false,
            hm: HmOptionsSer {
                points_per_dim: 1001,
                node_stride: 1,
            },
            probes: 20,
            probe_seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarSection {
    pub residual: f64,
    pub verdict: Verdict,
    pub required: bool,
}

impl ScalarSection {
    fn new(residual: f64, required: bool) -> Self {
        Self {
            residual,
            verdict: Verdict::of(residual),
            required,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HmSection {
    pub gap: f64,
    pub gap_raw: f64,
    pub slack: f64,
    pub worst_time: f64,
    pub verdict: Verdict,
    pub required: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AhgInterval {
    pub i: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AhgSection {
    pub sup: f64,
    pub verdict: Verdict,
    pub required: bool,
    pub intervals: Vec<AhgInterval>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiftSection {
    pub count: usize,
    /// Largest `z_v(T)`; sign-carrying.
    pub worst: f64,
    /// Largest `z_v(T) / (1 + sum_i |v_i - u_i|)`, the quantity the verdict
    /// applies to; bounded by the averaged-gradient residual.
    pub worst_normalized: f64,
    pub verdict: Verdict,
    pub required: bool,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalitySection {
    pub kind: Normality,
    pub p0: f64,
    pub terminal_costate_norm: f64,
}

/// All residuals of one extremal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualReport {
    pub ae: ScalarSection,
    pub hg: ScalarSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hm: Option<HmSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ahg: Option<AhgSection>,
    pub lift_probes: LiftSection,
    pub normality: NormalitySection,
}

impl ResidualReport {
    /// True when every required section passes.
    pub fn all_pass(&self) -> bool {
        let ok = |v: Verdict, req: bool| !req || v == Verdict::Pass;
        ok(self.ae.verdict, self.ae.required)
            && ok(self.hg.verdict, self.hg.required)
            && self.hm.as_ref().is_none_or(|h| ok(h.verdict, h.required))
            && self.ahg.as_ref().is_none_or(|a| ok(a.verdict, a.required))
            && ok(self.lift_probes.verdict, self.lift_probes.required)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("residual report is serializable")
    }
}

fn max_or_zero(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `sum_i |v_i - u(t_i^mid)|` over the probe's intervals, each weighted by
/// its width relative to the narrowest one.
fn probe_size(e: &Extremal, v: &PiecewiseConstantControl) -> f64 {
    let part = v.partition();
    let widths: Vec<f64> = (0..part.intervals())
        .map(|i| {
            let (a, b) = part.interval(i);
            b - a
        })
        .collect();
    let min_width = widths.iter().cloned().fold(f64::INFINITY, f64::min);
    let u = e.control().as_signal();
    (0..part.intervals())
        .map(|i| {
            let (a, b) = part.interval(i);
            (v.value(i) - u.value_at(0.5 * (a + b))).norm() * widths[i] / min_width
        })
        .sum()
}

/// Evaluate every residual. For piecewise-constant controls the averaged
/// condition is the required first-order test and the pointwise one is
/// informational; for general controls the pointwise condition is required.
pub fn certify(e: &Extremal, opts: &CheckOptions) -> Result<ResidualReport> {
    let sampled = e.control.as_sampled().is_some();
    let ae = ScalarSection::new(e.ae_residual(), true);
    let hg = ScalarSection::new(e.hg_residual()?, !sampled);
    let hm = if opts.require_hm {
        let gap = e.hm_gap(&HmOptions {
            points_per_dim: opts.hm.points_per_dim,
            node_stride: opts.hm.node_stride,
        })?;
        Some(HmSection {
            gap: gap.gap,
            gap_raw: gap.raw,
            slack: gap.slack,
            worst_time: gap.worst_time,
            verdict: Verdict::of(gap.gap),
            required: true,
        })
    } else {
        None
    };
    let ahg = match e.control.as_sampled() {
        Some(u) => {
            let residuals = e.ahg_residuals()?;
            let sup = residuals.iter().cloned().fold(0.0, f64::max);
            Some(AhgSection {
                sup,
                verdict: Verdict::of(sup),
                required: true,
                intervals: residuals
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        let (a, b) = u.partition().interval(i);
                        AhgInterval {
                            i,
                            t_start: a,
                            t_end: b,
                            residual: *r,
                        }
                    })
                    .collect(),
            })
        }
        None => None,
    };
    let probes = e.random_probes(opts.probes, opts.probe_seed, 16);
    let values = probes.iter().map(|v| e.lift_inequality(v)).collect::<Result<Vec<_>>>()?;
    let normalized: Vec<f64> = probes.iter().zip(&values).map(|(v, z)| z / (1.0 + probe_size(e, v))).collect();
    let worst = max_or_zero(&values);
    let worst_normalized = max_or_zero(&normalized);
    let lift_probes = LiftSection {
        count: values.len(),
        worst,
        worst_normalized,
        verdict: Verdict::of(worst_normalized.max(0.0)),
        required: true,
        values,
    };
    let normality = NormalitySection {
        kind: classify_normality(e.p0(), e.costate.terminal())?,
        p0: e.p0(),
        terminal_costate_norm: e.costate.terminal().norm(),
    };
    Ok(ResidualReport {
        ae,
        hg,
        hm,
        ahg,
        lift_probes,
        normality,
    })
}
