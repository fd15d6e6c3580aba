//! Partition-refinement sweeps: solve the sampled problem for a list of
//! uniform partitions and measure state, cost and costate errors against a
//! permanent reference on a shared comparison grid.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{CostateTrajectory, Trajectory};
use crate::io::fmt_f64;
use crate::oracles::{
    comparison_nodes, fine_surrogate, solve_lq_permanent, LqProblemData, PermanentReference, COMPARISON_NODES, MIN_SURROGATE_INTERVALS,
};
use crate::partition::{Interpolation, Partition, PiecewiseConstantControl, SampledControlSignal};
use crate::pmp::Extremal;
use crate::problem::{OcpProblem, TOL_SET};

use crate::solver::{solve, SampledSolution, SolverOptions};

/// Certification gate for sweep rows.
pub const ROW_AE_LIMIT: f64 = 1e-6;
pub const ROW_AHG_LIMIT: f64 = 1e-5;
/// Errors at or below this count as exact zeros in the trend checks.
pub const ERROR_FLOOR: f64 = 1e-12;
/// Slack for the cost ordering checks.
pub const COST_SLACK: f64 = 1e-7;

pub const REPORT_HEADER: [&str; 9] = [
    "N",
    "partition_norm",
    "cost",
    "cost_err",
    "state_sup_err",
    "costate_sup_err",
    "ahg_sup_residual",
    "feasibility",
    "iterations",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    Cold,
    Cascade,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSource {
    /// Analytic LQ reference when the problem is LQ and its unconstrained
    /// optimum stays inside `U`; fine surrogate otherwise.
    Auto,
    LqAnalytic,
    FineSurrogate {
        n_ref: usize,
        /// The surrogate is rejected when its error bar exceeds this
        /// multiple of the smallest nonzero row state error.
        tolerance_factor: f64,
    },
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub problem: OcpProblem,
    pub ns: Vec<usize>,
    pub reference: ReferenceSource,
    pub warm_start: WarmStart,
    pub comparison_nodes: usize,
    pub solver: SolverOptions,
    /// Concurrent rows for cold starts.
    pub jobs: usize,
}

impl SweepConfig {
    pub fn new(problem: OcpProblem) -> Self {
        Self {
            problem,
            ns: vec![2, 4, 8, 16, 32, 64],
            reference: ReferenceSource::Auto,
            warm_start: WarmStart::Cascade,
            comparison_nodes: COMPARISON_NODES,
            solver: SolverOptions::default(),
            jobs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() || self.ns[0] == 0 {
            return Err(Error::InvalidInput("partition list must be nonempty and positive".into()));
        }
        if self.ns.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("partition list must be strictly increasing".into()));
        }
        if self.comparison_nodes < 2 || self.jobs == 0 {
            return Err(Error::InvalidInput(
                "comparison grid needs two nodes and jobs must be positive".into(),
            ));
        }
        self.solver.validate()
    }

    fn default_n_ref(&self) -> usize {
        MIN_SURROGATE_INTERVALS.max(4 * self.ns.last().copied().unwrap_or(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub partition_norm: f64,
    pub cost: f64,
    pub cost_err: f64,
    pub state_sup_err: f64,
    pub costate_sup_err: f64,
    pub ahg_sup_residual: f64,
    pub feasibility: f64,
    pub iterations: usize,
    pub terminal_costate_norm: f64,
}

/// A row that did not enter the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedRow {
    pub n: usize,
    pub reason: String,
}

/// Unavailable rates are written as the string `"n/a"`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    #[serde(with = "rate_text")]
    pub cost_err: Option<f64>,
    #[serde(with = "rate_text")]
    pub state_sup_err: Option<f64>,
    #[serde(with = "rate_text")]
    pub costate_sup_err: Option<f64>,
}

mod rate_text {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Value(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => Repr::Value(*x),
            None => Repr::Text("n/a".into()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(match Repr::deserialize(d)? {
            Repr::Value(x) => Some(x),
            Repr::Text(_) => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub problem: String,
    pub reference: String,
    pub reference_cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_error_bar: Option<f64>,
    pub reference_terminal_costate_norm: f64,
    pub limitation: String,
    pub rows: Vec<ConvergenceRow>,
    pub flagged: Vec<FlaggedRow>,
    /// Least-squares slopes of `log err` against `log norm`; absent when
    /// fewer than two positive values exist.
    pub rates: Rates,
    pub checks: Vec<Check>,
}

impl ConvergenceReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.csv_string())?;
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut out = REPORT_HEADER.join(",");
        out.push('\n');
        for r in &self.rows {
            let cells = [
                r.n.to_string(),
                fmt_f64(r.partition_norm),
                fmt_f64(r.cost),
                fmt_f64(r.cost_err),
                fmt_f64(r.state_sup_err),
                fmt_f64(r.costate_sup_err),
                fmt_f64(r.ahg_sup_residual),
                fmt_f64(r.feasibility),
                r.iterations.to_string(),
            ];
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn summary_toml(&self) -> String {
        toml::to_string(self).expect("report is serializable")
    }
}

/// Reference samples on the comparison grid.
struct Samples {
    nodes: Vec<f64>,
    x: Vec<DVector<f64>>,
    p: Vec<DVector<f64>>,
}

fn sample_reference(reference: &PermanentReference, nodes: Vec<f64>) -> Samples {
    let x = nodes.iter().map(|&t| reference.state_at(t)).collect();
    let p = nodes.iter().map(|&t| reference.costate_at(t)).collect();
    Samples { nodes, x, p }
}

fn build_reference(cfg: &SweepConfig) -> Result<PermanentReference> {
    let prob = &cfg.problem;
    let analytic = || -> Result<Option<PermanentReference>> {
        let Ok(data) = LqProblemData::from_problem(prob) else {
            return Ok(None);
        };
        let reference = solve_lq_permanent(&data)?;
        let inside = comparison_nodes(prob.horizon(), cfg.comparison_nodes)
            .iter()
            .all(|&t| prob.control_set().contains(&reference.control_at(t), TOL_SET));
        Ok(inside.then_some(reference))
    };
    match cfg.reference {
        ReferenceSource::LqAnalytic => analytic()?
            .ok_or_else(|| Error::InvalidInput("analytic reference needs an LQ problem whose optimal control stays inside U".into())),
        ReferenceSource::Auto => match analytic()? {
            Some(r) => Ok(r),
            None => fine_surrogate(prob, cfg.default_n_ref(), &cfg.solver, None, None),
        },
        ReferenceSource::FineSurrogate { n_ref, .. } => fine_surrogate(prob, n_ref, &cfg.solver, None, None),
    }
}

fn row_for(
    sol: &SampledSolution,
    reference: &PermanentReference,
    samples: &Samples,
) -> Result<std::result::Result<ConvergenceRow, String>> {
    let extremal = sol.extremal()?;
    let ae = extremal.ae_residual();
    let ahg = extremal.ahg_residuals()?.into_iter().fold(0.0, f64::max);
    if !(ae <= ROW_AE_LIMIT && ahg <= ROW_AHG_LIMIT) {
        return Ok(Err(format!("certification failed: ae {ae:e}, ahg {ahg:e}")));
    }
    let sup = |f: &dyn Fn(usize) -> f64| (0..samples.nodes.len()).map(f).fold(0.0, f64::max);
    let state_err = sup(&|k| (sol.state.eval(samples.nodes[k]) - &samples.x[k]).norm());
    let costate_err = sup(&|k| (sol.costate.eval(samples.nodes[k]) - &samples.p[k]).norm());
    Ok(Ok(ConvergenceRow {
        n: sol.partition().intervals(),
        partition_norm: sol.partition().norm(),
        cost: sol.cost,
        cost_err: (sol.cost - reference.cost()).abs(),
        state_sup_err: state_err,
        costate_sup_err: costate_err,
        ahg_sup_residual: ahg,
        feasibility: sol.diagnostics.feasibility,
        iterations: sol.diagnostics.inner_iterations,
        terminal_costate_norm: sol.costate.terminal().norm(),
    }))
}

/// Run the sweep; rows that fail to solve or certify are flagged and left
/// out of the table.
pub fn sweep(cfg: &SweepConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let prob = &cfg.problem;
    let reference = build_reference(cfg)?;
    let samples = sample_reference(&reference, comparison_nodes(prob.horizon(), cfg.comparison_nodes));
    let opts = SolverOptions {
        certify: false,
        ..cfg.solver.clone()
    };
    let solve_row = |n: usize, warm: Option<&PiecewiseConstantControl>| -> Result<std::result::Result<SampledSolution, String>> {
        let part = Partition::uniform(n, prob.horizon())?;
        match solve(prob, &part, &opts, warm) {
            Ok(s) => Ok(Ok(s)),
            Err(e @ (Error::InvalidInput(_) | Error::Precondition(_))) => Err(e),
            Err(e) => Ok(Err(format!("solver failed: {e}"))),
        }
    };

    let mut outcomes: Vec<std::result::Result<SampledSolution, String>> = Vec::with_capacity(cfg.ns.len());
    match cfg.warm_start {
        WarmStart::Cascade => {
            let mut warm: Option<PiecewiseConstantControl> = None;
            for &n in &cfg.ns {
                let out = solve_row(n, warm.as_ref())?;
                if let Ok(s) = &out {
                    warm = Some(s.control.clone());
                }
                outcomes.push(out);
            }
        }
        WarmStart::Cold => {
            let mut slots: Vec<Option<Result<std::result::Result<SampledSolution, String>>>> = (0..cfg.ns.len()).map(|_| None).collect();
            for chunk in (0..cfg.ns.len()).collect::<Vec<_>>().chunks(cfg.jobs) {
                let results: Vec<_> = std::thread::scope(|scope| {
                    let handles: Vec<_> = chunk.iter().map(|&i| scope.spawn(move || solve_row(cfg.ns[i], None))).collect();
                    handles.into_iter().map(|h| h.join().expect("sweep row panicked")).collect()
                });
                for (&i, r) in chunk.iter().zip(results) {
                    slots[i] = Some(r);
                }
            }
            for slot in slots {
                outcomes.push(slot.expect("every row ran")?);
            }
        }
    }

    let mut rows = Vec::new();
    let mut flagged = Vec::new();
    for (&n, out) in cfg.ns.iter().zip(outcomes) {
        match out.map(|s| row_for(&s, &reference, &samples)) {
            Ok(Ok(Ok(row))) => rows.push(row),
            Ok(Ok(Err(reason))) | Err(reason) => flagged.push(FlaggedRow { n, reason }),
            Ok(Err(e)) => return Err(e),
        }
    }

    if let Some(bar) = reference.error_bar() {
        let factor = match cfg.reference {
            ReferenceSource::FineSurrogate { tolerance_factor, .. } => tolerance_factor,
            _ => DEFAULT_SURROGATE_FACTOR,
        };
        let smallest = rows
            .iter()
            .map(|r| r.state_sup_err)
            .filter(|e| *e > ERROR_FLOOR)
            .fold(f64::INFINITY, f64::min);
        if smallest.is_finite() && bar > factor * smallest {
            return Err(Error::ReferenceRejected {
                error_bar: bar,
                limit: factor * smallest,
            });
        }
    }

    let reference_terminal = reference.costate_at(prob.horizon()).norm();
    let rates = Rates {
        cost_err: fit_rate(&rows, |r| r.cost_err),
        state_sup_err: fit_rate(&rows, |r| r.state_sup_err),
        costate_sup_err: fit_rate(&rows, |r| r.costate_sup_err),
    };
    let checks = acceptance_checks(&rows, &flagged, reference.cost(), reference_terminal);
    Ok(ConvergenceReport {
        problem: prob.name().to_string(),
        reference: reference.provenance().to_string(),
        reference_cost: reference.cost(),
        reference_error_bar: reference.error_bar(),
        reference_terminal_costate_norm: reference_terminal,
        limitation: "each row tracks one stationary point of the sampled problem; global optimality is not certified".into(),
        rows,
        flagged,
        rates,
        checks,
    })
}

/// Surrogate rejection factor used by [`ReferenceSource::Auto`].
pub const DEFAULT_SURROGATE_FACTOR: f64 = 0.1;

/// Least-squares slope of `log err` against `log partition_norm`.
pub fn fit_rate(rows: &[ConvergenceRow], err: impl Fn(&ConvergenceRow) -> f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| err(r) > ERROR_FLOOR)
        .map(|r| (r.partition_norm.ln(), err(r).ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Strictly decreasing with at most one step that rises by no more than
/// 5%; values at or below [`ERROR_FLOOR`] count as zero.
pub fn decreasing_with_noise(values: &[f64]) -> bool {
    let mut allowance = 1;
    for w in values.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= ERROR_FLOOR || b < a {
            continue;
        }
        if allowance > 0 && b <= 1.05 * a {
            allowance -= 1;
            continue;
        }
        return false;
    }
    true
}

fn ratio_ok(values: &[f64]) -> bool {
    match (values.first(), values.last()) {
        (Some(&first), Some(&last)) if values.len() >= 2 => last <= ERROR_FLOOR || last <= 0.1 * first,
        _ => true,
    }
}

fn acceptance_checks(rows: &[ConvergenceRow], flagged: &[FlaggedRow], reference_cost: f64, reference_terminal: f64) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut push = |name: &str, pass: bool, detail: String| {
        checks.push(Check {
            name: name.into(),
            pass,
            detail,
        })
    };
    push(
        "all_rows_certified",
        flagged.is_empty() && !rows.is_empty(),
        format!("{} certified, {} flagged", rows.len(), flagged.len()),
    );
    type Column = (&'static str, fn(&ConvergenceRow) -> f64);
    let columns: [Column; 3] = [
        ("state_sup_err", |r| r.state_sup_err),
        ("cost_err", |r| r.cost_err),
        ("costate_sup_err", |r| r.costate_sup_err),
    ];
    for (name, get) in columns {
        let v: Vec<f64> = rows.iter().map(get).collect();
        push(&format!("{name}_decreasing"), decreasing_with_noise(&v), format!("{v:?}"));
        let detail = match (v.first(), v.last()) {
            (Some(a), Some(b)) if v.len() >= 2 => format!("final/initial = {:e}", b / a),
            _ => "single row: not applicable".into(),
        };
        push(&format!("{name}_ratio"), ratio_ok(&v), detail);
    }
    let below = rows
        .iter()
        .filter(|r| r.cost < reference_cost - COST_SLACK)
        .map(|r| r.n)
        .collect::<Vec<_>>();
    push("cost_above_reference", below.is_empty(), format!("rows below reference: {below:?}"));
    let mut violations = Vec::new();
    for a in rows {
        if let Some(b) = rows.iter().find(|b| b.n == 2 * a.n) {
            if b.cost > a.cost + COST_SLACK {
                violations.push((a.n, b.n));
            }
        }
    }
    push(
        "cost_monotone_under_refinement",
        violations.is_empty(),
        format!("violations: {violations:?}"),
    );
    let worst = rows.iter().map(|r| r.terminal_costate_norm).fold(0.0, f64::max);
    let bound = 10.0 * reference_terminal + 1.0;
    push(
        "terminal_costate_bounded",
        worst <= bound,
        format!("max |p_T(T)| = {worst:e}, bound {bound:e}"),
    );
    checks
}

/// Pointwise maximizer of the Hamiltonian (`p0 = -1`) for control-affine,
/// control-quadratic problems: `u = Proj_U(R(t)^{-1} (G(x,t)' p - c(x,t)))`,
/// evaluated at the grid nodes and interpolated linearly.
pub fn recover_control_from_costate(prob: &OcpProblem, x: &Trajectory, p: &CostateTrajectory) -> Result<SampledControlSignal> {
    let aq = prob
        .model()
        .affine_quadratic()
        .ok_or_else(|| Error::InvalidInput(format!("problem '{}' is not control-affine/quadratic", prob.name())))?;
    if x.grid() != p.grid() {
        return Err(Error::InvalidInput("state and costate must share a grid".into()));
    }
    if p.p0() >= 0.0 {
        return Err(Error::InvalidInput("control recovery needs a normal costate".into()));
    }
    let t = x.grid().times();
    let values = t
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let xk = &x.states()[k];
            let pk = &p.values()[k] / (-p.p0());
            let r = aq.control_weight(s);
            let rhs = aq.input_matrix(xk, s).tr_mul(&pk) - aq.linear_weight(xk, s);
            let u = r
                .cholesky()
                .map(|c| c.solve(&rhs))
                .ok_or_else(|| Error::Singular(format!("R(t) is not positive definite at t = {s}")))?;
            Ok(prob.control_set().project(&u))
        })
        .collect::<Result<Vec<_>>>()?;
    SampledControlSignal::new(t.to_vec(), values, Interpolation::PiecewiseLinear)
}

/// Extremal of a sweep row, for callers that need residual details.
pub fn row_extremal(sol: &SampledSolution) -> Result<Extremal> {
    sol.extremal()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{integrate_state, TimeGrid};
    use crate::oracles::{solve_lq_permanent, LqProblemData};
    use crate::partition::PiecewiseConstantControl;
    use crate::problem::lookup;
    use nalgebra::dvector;

    fn row(n: usize, err: f64) -> ConvergenceRow {
        ConvergenceRow {
            n,
            partition_norm: 1.0 / n as f64,
            cost: 1.0,
            cost_err: err,
            state_sup_err: err,
            costate_sup_err: err,
            ahg_sup_residual: 0.0,
            feasibility: 0.0,
            iterations: 0,
            terminal_costate_norm: 0.0,
        }
    }

    #[test]
    fn rate_fit_recovers_power_law() {
        let rows: Vec<_> = [2, 4, 8, 16].iter().map(|&n| row(n, 3.0 / (n * n) as f64)).collect();
        assert!((fit_rate(&rows, |r| r.state_sup_err).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(fit_rate(&rows[..1], |r| r.state_sup_err), None);
        let zeros: Vec<_> = [2, 4].iter().map(|&n| row(n, 0.0)).collect();
        assert_eq!(fit_rate(&zeros, |r| r.cost_err), None);
    }

    #[test]
    fn trend_tolerates_one_small_rise() {
        assert!(decreasing_with_noise(&[1.0, 0.5, 0.51, 0.1]));
        assert!(!decreasing_with_noise(&[1.0, 0.5, 0.51, 0.52]));
        assert!(!decreasing_with_noise(&[1.0, 0.5, 0.6]));
        assert!(decreasing_with_noise(&[1.0, 1e-13, 5e-13]));
        assert!(decreasing_with_noise(&[]));
    }

    #[test]
    fn config_validation() {
        let prob = lookup("lq_double_integrator").unwrap().build_default().unwrap();
        let mut cfg = SweepConfig::new(prob);
        assert!(cfg.validate().is_ok());
        cfg.ns = vec![4, 4];
        assert!(matches!(cfg.validate(), Err(Error::InvalidInput(_))));
        cfg.ns = vec![];
        assert!(cfg.validate().is_err());
        cfg.ns = vec![2];
        cfg.jobs = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_problem_has_zero_errors() {
        let base = lookup("lq_double_integrator").unwrap().build_default().unwrap();
        let prob = base.with_endpoints(dvector![0.0, 0.0], dvector![0.0, 0.0]).unwrap();
        let mut cfg = SweepConfig::new(prob);
        cfg.ns = vec![2, 4];
        cfg.comparison_nodes = 257;
        let report = sweep(&cfg).unwrap();
        assert_eq!(report.rows.len(), 2);
        for r in &report.rows {
            assert!(
                r.cost_err <= 1e-14 && r.state_sup_err <= 1e-14 && r.costate_sup_err <= 1e-12,
                "{r:?}"
            );
        }
        assert_eq!(report.rates, Rates::default());
        assert!(report.summary_toml().contains("state_sup_err = \"n/a\""));
        let back: ConvergenceReport = toml::from_str(&report.summary_toml()).unwrap();
        assert_eq!(back.rates, Rates::default());
        assert!(report.all_pass(), "{:?}", report.checks);
    }

    #[test]
    fn lq_sweep_converges_and_is_reproducible() {
        let prob = lookup("lq_double_integrator").unwrap().build_default().unwrap();
        let mut cfg = SweepConfig::new(prob);
        cfg.ns = vec![2, 4, 8];
        cfg.comparison_nodes = 513;
        cfg.warm_start = WarmStart::Cold;
        let serial = sweep(&cfg).unwrap();
        cfg.jobs = 3;
        let parallel = sweep(&cfg).unwrap();
        assert_eq!(serial.csv_string(), parallel.csv_string());
        assert!(serial.all_pass(), "{:?}", serial.checks);
        assert_eq!(serial.reference, "lq_analytic");
        let rate = serial.rates.state_sup_err.unwrap();
        assert!(rate > 1.5, "{rate}");
        let csv = serial.csv_string();
        assert!(csv.starts_with("N,partition_norm,cost,cost_err,state_sup_err,costate_sup_err,ahg_sup_residual,feasibility,iterations\n"));
        let summary: ConvergenceReport = toml::from_str(&serial.summary_toml()).unwrap();
        assert_eq!(summary.rows, serial.rows);
    }

    #[test]
    fn analytic_reference_requires_lq() {
        let prob = lookup("affine_quadratic").unwrap().build_default().unwrap();
        let mut cfg = SweepConfig::new(prob);
        cfg.reference = ReferenceSource::LqAnalytic;
        assert!(matches!(sweep(&cfg), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn recovered_control_matches_analytic_lq() {
        let prob = lookup("lq_double_integrator").unwrap().build_default().unwrap();
        let reference = solve_lq_permanent(&LqProblemData::from_problem(&prob).unwrap()).unwrap();
        let grid = TimeGrid::uniform(1.0, 256).unwrap();
        let e = reference.to_extremal(&prob, &grid).unwrap();
        let u = recover_control_from_costate(&prob, e.state(), e.costate()).unwrap();
        for (t, v) in u.grid().iter().zip(u.values()) {
            assert!((v - reference.control_at(*t)).norm() <= 1e-8, "t = {t}");
        }
    }

    #[test]
    fn zero_costate_recovers_projected_linear_term() {
        let prob = lookup("affine_quadratic").unwrap().build_default().unwrap();
        let part = crate::partition::Partition::uniform(2, prob.horizon()).unwrap();
        let u = PiecewiseConstantControl::constant(part, dvector![0.0]).unwrap();
        let grid = TimeGrid::uniform(prob.horizon(), 64).unwrap();
        let x = integrate_state(&prob, &u, &grid).unwrap();
        let zeros = vec![DVector::zeros(prob.state_dim()); grid.times().len()];
        let p = CostateTrajectory::from_samples(&prob, &x, &u, -1.0, zeros).unwrap();
        let aq = prob.model().affine_quadratic().unwrap();
        let rec = recover_control_from_costate(&prob, &x, &p).unwrap();
        for (k, &t) in grid.times().iter().enumerate() {
            let xk = &x.states()[k];
            let want = prob
                .control_set()
                .project(&(-aq.control_weight(t).try_inverse().unwrap() * aq.linear_weight(xk, t)));
            assert!((&rec.values()[k] - want).norm() <= 1e-14);
        }
        let cubic = lookup("cubic_counterexample").unwrap().build_default().unwrap();
        assert!(recover_control_from_costate(&cubic, &x, &p).is_err());
    }
}
