//! Sampled-data optimal control: minimize the cost over piecewise-constant
//! controls on a fixed partition subject to `x(T) = x_T`.
//!
//! Augmented Lagrangian outer loop on the terminal constraint, projected
//! gradient with Armijo backtracking inside. At a fixed point
//! `Proj_U(u_i - g_i) = u_i` with `g_i = -int grad_u H`, so stationarity of the
//! inner problem is exactly the averaged Hamiltonian gradient condition for
//! `p = -lambda`, `p0 = -1`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{integrate_costate, integrate_state, CostateTrajectory, TimeGrid, Trajectory, DEFAULT_STEPS};
use crate::partition::{Partition, PiecewiseConstantControl};
use crate::pmp::{averaged_gradient, certify, CheckOptions, Extremal, ExtremalControl, ResidualReport};
use crate::problem::{OcpProblem, TOL_SET};

/// Multiplier norm beyond which the solve is abandoned.
pub const MULTIPLIER_LIMIT: f64 = 1e8;
/// Outer rounds without feasibility progress before giving up.
pub const STALL_ROUNDS: usize = 5;
/// Relative objective change treated as round-off.
const NOISE_FLOOR: f64 = 1e-10;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_outer: usize,
    pub max_inner: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub feas_tol: f64,
    pub stat_tol: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub step_init: f64,
    /// Largest integration step; `T / 1024` when absent.
    pub h_max: Option<f64>,
    /// Attach a residual report to the solution.
    pub certify: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_outer: 50,
            max_inner: 2000,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            feas_tol: 1e-8,
            stat_tol: 1e-8,
            armijo_c: 1e-4,
            backtrack: 0.5,
            step_init: 1.0,
            h_max: None,
            certify: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("penalty_init", self.penalty_init),
            ("feas_tol", self.feas_tol),
            ("stat_tol", self.stat_tol),
            ("armijo_c", self.armijo_c),
            ("backtrack", self.backtrack),
            ("step_init", self.step_init),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive (got {v})")));
            }
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::InvalidInput("iteration limits must be positive".into()));
        }
        if !(self.penalty_growth > 1.0 && self.penalty_growth.is_finite()) {
            return Err(Error::InvalidInput("penalty_growth must exceed 1".into()));
        }
        if self.backtrack >= 1.0 || self.armijo_c >= 1.0 {
            return Err(Error::InvalidInput("backtrack and armijo_c must lie in (0, 1)".into()));
        }
        if let Some(h) = self.h_max {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidInput(format!("h_max must be positive (got {h})")));
            }
        }
        Ok(())
    }

    pub fn grid_for(&self, partition: &Partition) -> Result<TimeGrid> {
        TimeGrid::aligned(partition, self.h_max.unwrap_or(partition.horizon() / DEFAULT_STEPS as f64))
    }
}

/// One accepted inner step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub outer: usize,
    pub inner: usize,
    pub penalty: f64,
    /// Augmented objective after the step.
    pub objective: f64,
    pub step: f64,
    /// Stationarity before the step.
    pub stationarity: f64,
    pub feasibility: f64,
    /// Accepted on the round-off floor rather than the sufficient-decrease test.
    pub noise_floor: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub feasibility: f64,
    pub stationarity: f64,
    pub penalty: f64,
}

/// Solution of the sampled problem with its normal lift `(p, -1)`.
#[derive(Debug, Clone)]
pub struct SampledSolution {
    pub problem: OcpProblem,
    pub control: PiecewiseConstantControl,
    pub state: Trajectory,
    pub costate: CostateTrajectory,
    pub cost: f64,
    /// Terminal-constraint multiplier `mu`; `p(T) = -mu`.
    pub multiplier: DVector<f64>,
    pub diagnostics: SolverDiagnostics,
    pub log: Vec<IterationRecord>,
    pub report: Option<ResidualReport>,
}

impl SampledSolution {
    pub fn extremal(&self) -> Result<Extremal> {
        Extremal::new(
            self.problem.clone(),
            ExtremalControl::Sampled(self.control.clone()),
            self.state.clone(),
            self.costate.clone(),
        )
    }

    pub fn partition(&self) -> &Partition {
        self.control.partition()
    }
}

struct Evaluation {
    state: Trajectory,
    objective: f64,
    residual: DVector<f64>,
}

fn evaluate(prob: &OcpProblem, u: &PiecewiseConstantControl, grid: &TimeGrid, mu: &DVector<f64>, rho: f64) -> Result<Evaluation> {
    let state = integrate_state(prob, u, grid)?;
    let residual = state.final_state() - prob.x_target();
    let objective = state.cost() + mu.dot(&residual) + 0.5 * rho * residual.norm_squared();
    Ok(Evaluation {
        state,
        objective,
        residual,
    })
}

/// Adjoint gradient `g_i` of the augmented objective and the costate
/// `p = -lambda`.
fn gradient(
    prob: &OcpProblem,
    u: &PiecewiseConstantControl,
    ev: &Evaluation,
    mu: &DVector<f64>,
    rho: f64,
) -> Result<(Vec<DVector<f64>>, CostateTrajectory)> {
    let lambda_t = mu + &ev.residual * rho;
    let p = integrate_costate(prob, &ev.state, u, -1.0, &(-lambda_t))?;
    let g = averaged_gradient(prob, &ev.state, &p, u)?.into_iter().map(|v| -v).collect();
    Ok((g, p))
}

fn stationarity(prob: &OcpProblem, u: &PiecewiseConstantControl, g: &[DVector<f64>]) -> f64 {
    let set = prob.control_set();
    u.values()
        .iter()
        .zip(g)
        .map(|(ui, gi)| (set.project(&(ui - gi)) - ui).norm())
        .fold(0.0, f64::max)
}

fn dot(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// Adjoint gradient of `C(u) + mu'(x(T) - x_T) + rho/2 |x(T) - x_T|^2` with
/// respect to the interval values.
pub fn augmented_gradient(
    prob: &OcpProblem,
    u: &PiecewiseConstantControl,
    grid: &TimeGrid,
    mu: &DVector<f64>,
    rho: f64,
) -> Result<(f64, Vec<DVector<f64>>)> {
    let ev = evaluate(prob, u, grid, mu, rho)?;
    let (g, _) = gradient(prob, u, &ev, mu, rho)?;
    Ok((ev.objective, g))
}

/// Relative error between the adjoint gradient and central differences of
/// the augmented objective with step `step * (1 + |u_ij|)`.
pub fn gradient_check_with_step(
    prob: &OcpProblem,
    u: &PiecewiseConstantControl,
    mu: &DVector<f64>,
    rho: f64,
    h_max: Option<f64>,
    step: f64,
) -> Result<f64> {
    let opts = SolverOptions {
        h_max,
        ..SolverOptions::default()
    };
    let grid = opts.grid_for(u.partition())?;
    let (_, g) = augmented_gradient(prob, u, &grid, mu, rho)?;
    let mut err = 0.0;
    let mut scale = 0.0;
    for i in 0..u.partition().intervals() {
        for j in 0..prob.control_dim() {
            let d = step * (1.0 + u.value(i)[j].abs());
            let shifted = |delta: f64| -> Result<f64> {
                let mut v = u.clone();
                let mut ui = v.value(i).clone();
                ui[j] += delta;
                v.set_value(i, ui);
                Ok(evaluate(prob, &v, &grid, mu, rho)?.objective)
            };
            let fd = (shifted(d)? - shifted(-d)?) / (2.0 * d);
            err += (fd - g[i][j]).powi(2);
            scale += g[i][j].powi(2).max(fd * fd);
        }
    }
    Ok(if scale == 0.0 { 0.0 } else { (err / scale).sqrt() })
}

/// [`gradient_check_with_step`] with step `1e-6`.
pub fn gradient_check(prob: &OcpProblem, u: &PiecewiseConstantControl, mu: &DVector<f64>, rho: f64) -> Result<f64> {
    gradient_check_with_step(prob, u, mu, rho, None, 1e-6)
}

fn initial_control(prob: &OcpProblem, partition: &Partition, warm: Option<&PiecewiseConstantControl>) -> Result<PiecewiseConstantControl> {
    match warm {
        Some(w) => {
            if w.partition().horizon() != partition.horizon() {
                return Err(Error::InvalidInput("warm start horizon differs from the partition".into()));
            }
            if !w.lies_in(prob.control_set(), TOL_SET) {
                return Err(Error::Precondition("warm start leaves the control set".into()));
            }
            Ok(if w.partition() == partition {
                w.clone()
            } else {
                w.resample_onto(partition)
            })
        }
        None => {
            let zero = prob.control_set().project(&DVector::zeros(prob.control_dim()));
            PiecewiseConstantControl::constant(partition.clone(), zero)
        }
    }
}

type Blocks = Vec<DVector<f64>>;

/// Solve the sampled problem on `partition`.
pub fn solve(
    prob: &OcpProblem,
    partition: &Partition,
    opts: &SolverOptions,
    warm_start: Option<&PiecewiseConstantControl>,
) -> Result<SampledSolution> {
    opts.validate()?;
    if partition.horizon() != prob.horizon() {
        return Err(Error::InvalidInput(format!(
            "partition horizon {} differs from problem horizon {}",
            partition.horizon(),
            prob.horizon()
        )));
    }
    let grid = opts.grid_for(partition)?;
    let widths: Vec<f64> = (0..partition.intervals())
        .map(|i| {
            let (a, b) = partition.interval(i);
            b - a
        })
        .collect();
    let set = prob.control_set();

    let mut u = initial_control(prob, partition, warm_start)?;
    let mut mu = DVector::zeros(prob.state_dim());
    let mut rho = opts.penalty_init;
    let mut log = Vec::new();
    let mut inner_total = 0;
    let mut best_feas = f64::INFINITY;
    let mut stalled = 0;
    let mut prev_feas = f64::INFINITY;
    let mut stat = f64::INFINITY;
    let mut feas = f64::INFINITY;

    for outer in 0..opts.max_outer {
        let inner_tol = opts.stat_tol.max((0.1 * prev_feas).min(1e-2));
        let mut ev = evaluate(prob, &u, &grid, &mu, rho)?;
        let (mut g, mut p) = gradient(prob, &u, &ev, &mu, rho)?;
        let mut alpha = opts.step_init;
        // (control, gradient) at the previous iterate, for the BB step
        let mut previous: Option<(Blocks, Blocks)> = None;

        for inner in 0..opts.max_inner {
            stat = stationarity(prob, &u, &g);
            if stat <= inner_tol {
                break;
            }
            let scaled: Vec<DVector<f64>> = g.iter().zip(&widths).map(|(gi, h)| gi / *h).collect();
            if let Some((pu, pg)) = &previous {
                let s: Vec<DVector<f64>> = u.values().iter().zip(pu).map(|(a, b)| a - b).collect();
                let y: Vec<DVector<f64>> = scaled.iter().zip(pg).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 0.0 {
                    alpha = (dot(&s, &s) / sy).clamp(1e-12, 1e12);
                }
            }

            let mut step = alpha;
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let values: Vec<DVector<f64>> = u
                    .values()
                    .iter()
                    .zip(&scaled)
                    .map(|(ui, si)| set.project(&(ui - si * step)))
                    .collect();
                let d: Vec<DVector<f64>> = values.iter().zip(u.values()).map(|(a, b)| a - b).collect();
                let gd = dot(&g, &d);
                if gd >= 0.0 {
                    break;
                }
                let cand = PiecewiseConstantControl::new(partition.clone(), values)?;
                match evaluate(prob, &cand, &grid, &mu, rho) {
                    Ok(new) => {
                        if new.objective <= ev.objective + opts.armijo_c * gd {
                            let (g_new, p_new) = gradient(prob, &cand, &new, &mu, rho)?;
                            accepted = Some((cand, new, g_new, p_new, false));
                            break;
                        }
                        // objective change below round-off: approximate Armijo
                        // test on the directional derivative
                        if (new.objective - ev.objective).abs() <= NOISE_FLOOR * (1.0 + ev.objective.abs()) {
                            let (g_new, p_new) = gradient(prob, &cand, &new, &mu, rho)?;
                            if dot(&g_new, &d) <= (2.0 * opts.armijo_c - 1.0) * gd {
                                accepted = Some((cand, new, g_new, p_new, true));
                                break;
                            }
                        }
                    }
                    Err(Error::Divergence { .. }) => {}
                    Err(e) => return Err(e),
                }
                step *= opts.backtrack;
            }
            let Some((cand, new, g_new, p_new, noise_floor)) = accepted else {
                break;
            };
            previous = Some((u.values().to_vec(), scaled));
            u = cand;
            ev = new;
            g = g_new;
            p = p_new;
            inner_total += 1;
            log.push(IterationRecord {
                outer,
                inner,
                penalty: rho,
                objective: ev.objective,
                step,
                stationarity: stat,
                feasibility: ev.residual.norm(),
                noise_floor,
            });
        }
        stat = stationarity(prob, &u, &g);
        feas = ev.residual.norm();

        let lambda_t = &mu + &ev.residual * rho;
        if feas <= opts.feas_tol && stat <= opts.stat_tol {
            let diagnostics = SolverDiagnostics {
                outer_iterations: outer + 1,
                inner_iterations: inner_total,
                feasibility: feas,
                stationarity: stat,
                penalty: rho,
            };
            let mut sol = SampledSolution {
                problem: prob.clone(),
                control: u,
                cost: ev.state.cost(),
                state: ev.state,
                costate: p,
                multiplier: lambda_t,
                diagnostics,
                log,
                report: None,
            };
            if opts.certify {
                sol.report = Some(certify(&sol.extremal()?, &CheckOptions::default())?);
            }
            return Ok(sol);
        }

        mu = lambda_t;
        if mu.norm() > MULTIPLIER_LIMIT {
            return Err(Error::PossibleAbnormality { norm: mu.norm() });
        }
        if feas > opts.feas_tol {
            if feas < best_feas * (1.0 - 1e-3) {
                best_feas = feas;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= STALL_ROUNDS {
                    return Err(Error::InfeasibleStalled {
                        feasibility: feas,
                        rounds: outer + 1,
                    });
                }
            }
            if feas > 0.25 * prev_feas {
                rho *= opts.penalty_growth;
            }
        }
        prev_feas = feas;
    }
    Err(Error::MaxIterations {
        feasibility: feas,
        stationarity: stat,
    })
}
