//! Reference solutions: the permanent LQ problem through its Hamiltonian
//! boundary-value system, the sampled LQ problem through exact zero-order-hold
//! discretization and a condensed QP, and a fine-partition surrogate for
//! everything else.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{integrate_costate, integrate_state, CostateTrajectory, TimeGrid, Trajectory};
use crate::linalg::{condition_number, expm, gauss_legendre, solve_square};
use crate::partition::{ControlSignal, Interpolation, Partition, PiecewiseConstantControl, SampledControlSignal};
use crate::pmp::{averaged_gradient, certify, CheckOptions, Extremal, ExtremalControl};
use crate::problem::{ControlFactor, ControlSet, LinearQuadratic, OcpProblem, TOL_SET};
use crate::solver::{solve, SampledSolution, SolverDiagnostics, SolverOptions};

/// Shooting matrices with a larger condition number are rejected.
pub const SHOOTING_CONDITION_LIMIT: f64 = 1e12;
/// Largest partition the active-set enumeration accepts.
pub const MAX_ENUMERATION_INTERVALS: usize = 32;
/// Smallest partition accepted by [`fine_surrogate`].
pub const MIN_SURROGATE_INTERVALS: usize = 256;
/// Nodes of the uniform grid on which paths are compared.
pub const COMPARISON_NODES: usize = 4096;

/// Constant-coefficient LQ data: `x' = Ax + Bu`, `L = (x'Qx + u'Ru) / 2`.
#[derive(Debug, Clone)]
pub struct LqProblemData {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub horizon: f64,
    pub x0: DVector<f64>,
    pub x_target: DVector<f64>,
}

impl LqProblemData {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        horizon: f64,
        x0: DVector<f64>,
        x_target: DVector<f64>,
    ) -> Result<Self> {
        // shape, symmetry and definiteness checks
        LinearQuadratic::new(a.clone(), b.clone(), q.clone(), r.clone())?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput(format!("horizon must be positive (got {horizon})")));
        }
        if x0.len() != a.nrows() || x_target.len() != a.nrows() {
            return Err(Error::InvalidInput("endpoint dimension differs from A".into()));
        }
        Ok(Self {
            a,
            b,
            q,
            r,
            horizon,
            x0,
            x_target,
        })
    }

    pub fn from_problem(prob: &OcpProblem) -> Result<Self> {
        let m = prob
            .model()
            .lq_matrices()
            .ok_or_else(|| Error::InvalidInput(format!("problem '{}' is not linear-quadratic", prob.name())))?;
        Self::new(m.a, m.b, m.q, m.r, prob.horizon(), prob.x0().clone(), prob.x_target().clone())
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn to_problem(&self, control_set: ControlSet) -> Result<OcpProblem> {
        let model = LinearQuadratic::new(self.a.clone(), self.b.clone(), self.q.clone(), self.r.clone())?;
        OcpProblem::new(
            "lq_generic",
            Arc::new(model),
            self.horizon,
            self.x0.clone(),
            self.x_target.clone(),
            control_set,
        )
    }

    fn r_inv_bt(&self) -> Result<DMatrix<f64>> {
        self.r
            .clone()
            .cholesky()
            .map(|c| c.solve(&self.b.transpose()))
            .ok_or_else(|| Error::Singular("R is not positive definite".into()))
    }

    fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        0.5 * (x.dot(&(&self.q * x)) + u.dot(&(&self.r * u)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    LqAnalytic,
    FineSurrogate { n_ref: usize },
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::LqAnalytic => write!(f, "lq_analytic"),
            Provenance::FineSurrogate { n_ref } => write!(f, "fine_surrogate({n_ref})"),
        }
    }
}

#[derive(Debug, Clone)]
enum Source {
    /// `z(t) = exp(M t) z0` with `z = (x, p)`.
    Analytic {
        hamiltonian: DMatrix<f64>,
        z0: DVector<f64>,
        r_inv_bt: DMatrix<f64>,
    },
    Sampled(Box<SampledSolution>),
}

/// Reference solution `(x*, u*)` of the permanent problem with its normal
/// lift `(p, -1)`.
#[derive(Debug, Clone)]
pub struct PermanentReference {
    provenance: Provenance,
    cost: f64,
    error_bar: Option<f64>,
    n: usize,
    source: Source,
}

impl PermanentReference {
    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
    pub fn cost(&self) -> f64 {
        self.cost
    }
    /// Inter-resolution state distance of a surrogate; `None` when exact.
    pub fn error_bar(&self) -> Option<f64> {
        self.error_bar
    }
    pub fn p0(&self) -> f64 {
        -1.0
    }
    /// Underlying fine solution of a surrogate.
    pub fn sampled(&self) -> Option<&SampledSolution> {
        match &self.source {
            Source::Sampled(s) => Some(s),
            Source::Analytic { .. } => None,
        }
    }

    fn z(&self, t: f64) -> DVector<f64> {
        match &self.source {
            Source::Analytic { hamiltonian, z0, .. } => expm(&(hamiltonian * t)) * z0,
            Source::Sampled(_) => unreachable!("sampled references have no joint state"),
        }
    }

    pub fn state_at(&self, t: f64) -> DVector<f64> {
        match &self.source {
            Source::Analytic { .. } => self.z(t).rows(0, self.n).into_owned(),
            Source::Sampled(s) => s.state.eval(t),
        }
    }

    pub fn costate_at(&self, t: f64) -> DVector<f64> {
        match &self.source {
            Source::Analytic { .. } => self.z(t).rows(self.n, self.n).into_owned(),
            Source::Sampled(s) => s.costate.eval(t),
        }
    }

    pub fn control_at(&self, t: f64) -> DVector<f64> {
        match &self.source {
            Source::Analytic { r_inv_bt, .. } => r_inv_bt * self.costate_at(t),
            Source::Sampled(s) => s.control.value_at(t),
        }
    }

    /// Sample the reference on `grid` as an extremal of `prob`, with the
    /// control interpolated linearly between nodes.
    pub fn to_extremal(&self, prob: &OcpProblem, grid: &TimeGrid) -> Result<Extremal> {
        if let Source::Sampled(s) = &self.source {
            if s.state.grid() == grid {
                return s.extremal();
            }
        }
        let t = grid.times();
        let zs: Vec<(DVector<f64>, DVector<f64>, DVector<f64>)> = t
            .iter()
            .map(|&s| (self.state_at(s), self.costate_at(s), self.control_at(s)))
            .collect();
        let u = SampledControlSignal::new(t.to_vec(), zs.iter().map(|z| z.2.clone()).collect(), Interpolation::PiecewiseLinear)?;
        let x = Trajectory::from_samples(prob, &u, grid.clone(), zs.iter().map(|z| z.0.clone()).collect())?;
        let p = CostateTrajectory::from_samples(prob, &x, &u, -1.0, zs.into_iter().map(|z| z.1).collect())?;
        Extremal::new(prob.clone(), ExtremalControl::General(u), x, p)
    }
}

/// Uniform comparison nodes on `[0, horizon]`.
pub fn comparison_nodes(horizon: f64, count: usize) -> Vec<f64> {
    Partition::uniform(count.max(2) - 1, horizon)
        .expect("horizon is positive")
        .times()
        .to_vec()
}

/// Exact solution of the unconstrained LQ problem: `u* = R^{-1} B' p` with
/// `(x, p)` solving `x' = Ax + B R^{-1} B' p`, `p' = Qx - A'p`.
pub fn solve_lq_permanent(data: &LqProblemData) -> Result<PermanentReference> {
    let n = data.state_dim();
    let r_inv_bt = data.r_inv_bt()?;
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&data.a);
    m.view_mut((0, n), (n, n)).copy_from(&(&data.b * &r_inv_bt));
    m.view_mut((n, 0), (n, n)).copy_from(&data.q);
    m.view_mut((n, n), (n, n)).copy_from(&(-data.a.transpose()));

    let phi = expm(&(&m * data.horizon));
    let phi_xx = phi.view((0, 0), (n, n)).into_owned();
    let phi_xp = phi.view((0, n), (n, n)).into_owned();
    let condition = condition_number(&phi_xp);
    if !(condition <= SHOOTING_CONDITION_LIMIT) {
        return Err(Error::Unreachable { condition });
    }
    let p_init = solve_square(&phi_xp, &(&data.x_target - &phi_xx * &data.x0), "shooting matrix")?;
    let mut z0 = DVector::zeros(2 * n);
    z0.rows_mut(0, n).copy_from(&data.x0);
    z0.rows_mut(n, n).copy_from(&p_init);

    let mut reference = PermanentReference {
        provenance: Provenance::LqAnalytic,
        cost: 0.0,
        error_bar: None,
        n,
        source: Source::Analytic {
            hamiltonian: m,
            z0,
            r_inv_bt,
        },
    };
    let integrand = |t: f64| {
        let x = reference.state_at(t);
        let u = reference.control_at(t);
        data.running_cost(&x, &u)
    };
    let mut panels = 8;
    let mut cost = gauss_legendre(integrand, 0.0, data.horizon, panels);
    loop {
        panels *= 2;
        let refined = gauss_legendre(integrand, 0.0, data.horizon, panels);
        let converged = (refined - cost).abs() <= 1e-12 * (1.0 + refined.abs());
        cost = refined;
        if converged || panels >= 1024 {
            break;
        }
    }
    reference.cost = cost;
    Ok(reference)
}

/// Exact zero-order-hold data of one interval of length `h`:
/// `x(h) = E x + F u` and `int_0^h L ds = [x; u]' W [x; u] / 2`.
#[derive(Debug, Clone)]
pub struct ZohInterval {
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

/// Van Loan block exponential for the interval data of [`ZohInterval`].
pub fn zoh_interval(data: &LqProblemData, h: f64) -> ZohInterval {
    let (n, m) = (data.state_dim(), data.control_dim());
    let k = n + m;
    let mut c = DMatrix::zeros(k, k);
    c.view_mut((0, 0), (n, n)).copy_from(&data.a);
    c.view_mut((0, n), (n, m)).copy_from(&data.b);
    let mut weight = DMatrix::zeros(k, k);
    weight.view_mut((0, 0), (n, n)).copy_from(&data.q);
    weight.view_mut((n, n), (m, m)).copy_from(&data.r);
    let mut big = DMatrix::zeros(2 * k, 2 * k);
    big.view_mut((0, 0), (k, k)).copy_from(&(-c.transpose()));
    big.view_mut((0, k), (k, k)).copy_from(&weight);
    big.view_mut((k, k), (k, k)).copy_from(&c);
    let ex = expm(&(big * h));
    let f12 = ex.view((0, k), (k, k)).into_owned();
    let f22 = ex.view((k, k), (k, k)).into_owned();
    let w = f22.transpose() * f12;
    ZohInterval {
        e: f22.view((0, 0), (n, n)).into_owned(),
        f: f22.view((0, n), (n, m)).into_owned(),
        w: (&w + w.transpose()) * 0.5,
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExactSampledOptions {
    /// Largest number of KKT solves in the active-set search; `3^{mN}` (every
    /// free/lower/upper pattern) when absent.
    pub budget: Option<usize>,
    /// Integration step for the returned trajectories.
    pub h_max: Option<f64>,
    pub certify: bool,
}

/// Condensed QP `min c0 + f'U + U'HU/2` subject to `G U + g = x_T`.
struct CondensedQp {
    h: DMatrix<f64>,
    f: DVector<f64>,
    c0: f64,
    g_mat: DMatrix<f64>,
    g_vec: DVector<f64>,
}

fn condense(data: &LqProblemData, partition: &Partition) -> CondensedQp {
    let (n, m, big_n) = (data.state_dim(), data.control_dim(), partition.intervals());
    let dim = m * big_n;
    let mut sx = DMatrix::zeros(n, dim);
    let mut s0 = data.x0.clone();
    let mut h = DMatrix::zeros(dim, dim);
    let mut f = DVector::zeros(dim);
    let mut c0 = 0.0;
    for i in 0..big_n {
        let (a, b) = partition.interval(i);
        let zoh = zoh_interval(data, b - a);
        let mut z = DMatrix::zeros(n + m, dim);
        z.view_mut((0, 0), (n, dim)).copy_from(&sx);
        for j in 0..m {
            z[(n + j, i * m + j)] = 1.0;
        }
        let mut zeta = DVector::zeros(n + m);
        zeta.rows_mut(0, n).copy_from(&s0);
        let wz = &zoh.w * &z;
        h += z.transpose() * &wz;
        f += wz.transpose() * &zeta;
        c0 += 0.5 * zeta.dot(&(&zoh.w * &zeta));
        let mut next = &zoh.e * &sx;
        let mut cols = next.view_mut((0, i * m), (n, m));
        cols += &zoh.f;
        sx = next;
        s0 = &zoh.e * s0;
    }
    CondensedQp {
        h: (&h + h.transpose()) * 0.5,
        f,
        c0,
        g_mat: sx,
        g_vec: s0,
    }
}

/// Solution of the QP with the variables in `fixed` pinned to `values`.
fn solve_reduced(qp: &CondensedQp, target: &DVector<f64>, fixed: &[usize], values: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
    let dim = qp.f.len();
    let n = target.len();
    let free: Vec<usize> = (0..dim).filter(|i| !fixed.contains(i)).collect();
    let mut full = DVector::zeros(dim);
    for (&i, &v) in fixed.iter().zip(values) {
        full[i] = v;
    }
    let r = free.len();
    let mut kkt = DMatrix::zeros(r + n, r + n);
    let mut rhs = DVector::zeros(r + n);
    let pinned = &qp.h * &full;
    let reach = target - &qp.g_vec - &qp.g_mat * &full;
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            kkt[(a, b)] = qp.h[(i, j)];
        }
        for k in 0..n {
            kkt[(a, r + k)] = qp.g_mat[(k, i)];
            kkt[(r + k, a)] = qp.g_mat[(k, i)];
        }
        rhs[a] = -qp.f[i] - pinned[i];
    }
    rhs.rows_mut(r, n).copy_from(&reach);
    let sol = solve_square(&kkt, &rhs, "sampled LQ KKT system")?;
    for (a, &i) in free.iter().enumerate() {
        full[i] = sol[a];
    }
    Ok((full, sol.rows(r, n).into_owned()))
}

/// Per-variable bounds of a box-like control set.
fn box_bounds(set: &ControlSet) -> Option<(DVector<f64>, DVector<f64>)> {
    match set {
        ControlSet::Box { lower, upper } => Some((lower.clone(), upper.clone())),
        ControlSet::Product(factors) if factors.iter().all(|f| matches!(f, ControlFactor::Interval { .. })) => {
            let (lo, hi): (Vec<f64>, Vec<f64>) = factors
                .iter()
                .map(|f| match f {
                    ControlFactor::Interval { lower, upper } => (*lower, *upper),
                    ControlFactor::Ball { .. } => unreachable!(),
                })
                .unzip();
            Some((DVector::from_vec(lo), DVector::from_vec(hi)))
        }
        _ => None,
    }
}

/// Next `k`-combination of `0..n` in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn qp_active_set(
    qp: &CondensedQp,
    target: &DVector<f64>,
    set: &ControlSet,
    m: usize,
    budget: Option<usize>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let dim = qp.f.len();
    let (uz, nu) = solve_reduced(qp, target, &[], &[])?;
    let inside = |u: &DVector<f64>| (0..dim / m).all(|i| set.contains(&u.rows(i * m, m).into_owned(), TOL_SET));
    if inside(&uz) {
        return Ok((uz, nu));
    }
    let (lo, hi) =
        box_bounds(set).ok_or_else(|| Error::InvalidInput("active constraints are supported for box control sets only".into()))?;
    if dim / m > MAX_ENUMERATION_INTERVALS {
        return Err(Error::InvalidInput(format!(
            "active-set enumeration needs at most {MAX_ENUMERATION_INTERVALS} intervals"
        )));
    }
    let budget = budget.unwrap_or_else(|| 3usize.checked_pow(dim as u32).unwrap_or(usize::MAX));
    let bound = |i: usize, upper: bool| if upper { hi[i % m] } else { lo[i % m] };
    let mut evaluations = 1usize;
    for k in 1..=dim {
        let mut comb: Vec<usize> = (0..k).collect();
        loop {
            for sides in 0..(1u64 << k) {
                evaluations += 1;
                if evaluations > budget {
                    return Err(Error::BudgetExceeded { budget: budget as u64 });
                }
                let upper: Vec<bool> = (0..k).map(|j| sides >> j & 1 == 1).collect();
                let values: Vec<f64> = comb.iter().zip(&upper).map(|(&i, &up)| bound(i, up)).collect();
                let Ok((u, nu)) = solve_reduced(qp, target, &comb, &values) else {
                    continue;
                };
                let free_ok = (0..dim)
                    .filter(|i| !comb.contains(i))
                    .all(|i| u[i] >= lo[i % m] - 1e-10 * (1.0 + lo[i % m].abs()) && u[i] <= hi[i % m] + 1e-10 * (1.0 + hi[i % m].abs()));
                if !free_ok {
                    continue;
                }
                let grad = &qp.h * &u + &qp.f + qp.g_mat.tr_mul(&nu);
                let tol = 1e-9 * (1.0 + grad.amax());
                let signs_ok = comb
                    .iter()
                    .zip(&upper)
                    .all(|(&i, &up)| if up { grad[i] <= tol } else { grad[i] >= -tol });
                if signs_ok {
                    return Ok((u, nu));
                }
            }
            if !next_combination(&mut comb, dim) {
                break;
            }
        }
    }
    Err(Error::Singular("no KKT point found for the sampled LQ problem".into()))
}

/// Exact solution of the sampled LQ problem on `partition` over `set`.
pub fn solve_lq_sampled_exact(data: &LqProblemData, partition: &Partition, set: &ControlSet) -> Result<SampledSolution> {
    solve_lq_sampled_exact_with(
        data,
        partition,
        set,
        &ExactSampledOptions {
            certify: true,
            ..ExactSampledOptions::default()
        },
    )
}

pub fn solve_lq_sampled_exact_with(
    data: &LqProblemData,
    partition: &Partition,
    set: &ControlSet,
    opts: &ExactSampledOptions,
) -> Result<SampledSolution> {
    if partition.horizon() != data.horizon {
        return Err(Error::InvalidInput("partition horizon differs from the problem horizon".into()));
    }
    if set.dim() != data.control_dim() {
        return Err(Error::InvalidInput("control set dimension differs from B".into()));
    }
    let m = data.control_dim();
    let qp = condense(data, partition);
    let (u, nu) = qp_active_set(&qp, &data.x_target, set, m, opts.budget)?;
    let values = (0..partition.intervals())
        .map(|i| set.project(&u.rows(i * m, m).into_owned()))
        .collect();
    let control = PiecewiseConstantControl::new(partition.clone(), values)?;
    let prob = data.to_problem(set.clone())?;
    let solver_opts = SolverOptions {
        h_max: opts.h_max,
        ..SolverOptions::default()
    };
    let grid = solver_opts.grid_for(partition)?;
    let state = integrate_state(&prob, &control, &grid)?;
    let costate = integrate_costate(&prob, &state, &control, -1.0, &(-&nu))?;
    let stationarity = averaged_gradient(&prob, &state, &costate, &control)?
        .iter()
        .zip(control.values())
        .map(|(g, ui)| set.normal_cone_residual(ui, g))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let cost = qp.c0 + qp.f.dot(&u) + 0.5 * u.dot(&(&qp.h * &u));
    let mut sol = SampledSolution {
        diagnostics: SolverDiagnostics {
            outer_iterations: 0,
            inner_iterations: 0,
            feasibility: (state.final_state() - &data.x_target).norm(),
            stationarity,
            penalty: 0.0,
        },
        problem: prob,
        control,
        state,
        costate,
        cost,
        multiplier: nu,
        log: Vec::new(),
        report: None,
    };
    if opts.certify {
        sol.report = Some(certify(&sol.extremal()?, &CheckOptions::default())?);
    }
    Ok(sol)
}

/// Fine sampled solution used as the permanent reference: solves at `n_ref`
/// and `2 n_ref` intervals and keeps the finer one, with the sup-distance of
/// the two states as error bar. Fails when the bar exceeds `limit`.
pub fn fine_surrogate(
    prob: &OcpProblem,
    n_ref: usize,
    opts: &SolverOptions,
    warm_start: Option<&PiecewiseConstantControl>,
    limit: Option<f64>,
) -> Result<PermanentReference> {
    if n_ref < MIN_SURROGATE_INTERVALS {
        return Err(Error::InvalidInput(format!(
            "surrogate needs at least {MIN_SURROGATE_INTERVALS} intervals (got {n_ref})"
        )));
    }
    let opts = SolverOptions {
        certify: false,
        ..opts.clone()
    };
    let coarse = solve(prob, &Partition::uniform(n_ref, prob.horizon())?, &opts, warm_start)?;
    let fine = solve(prob, &Partition::uniform(2 * n_ref, prob.horizon())?, &opts, Some(&coarse.control))?;
    let nodes = comparison_nodes(prob.horizon(), COMPARISON_NODES);
    let error_bar = coarse.state.path().sup_distance(fine.state.path(), &nodes);
    if let Some(limit) = limit {
        if error_bar > limit {
            return Err(Error::ReferenceRejected { error_bar, limit });
        }
    }
    Ok(PermanentReference {
        provenance: Provenance::FineSurrogate { n_ref },
        cost: fine.cost,
        error_bar: Some(error_bar),
        n: prob.state_dim(),
        source: Source::Sampled(Box::new(fine)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build, ParamValue, ProblemConfig};
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_transfer() -> LqProblemData {
        LqProblemData::new(
            dmatrix![0.0],
            dmatrix![1.0],
            dmatrix![0.0],
            dmatrix![1.0],
            1.0,
            dvector![0.0],
            dvector![1.0],
        )
        .unwrap()
    }

    fn double_integrator(q: f64) -> OcpProblem {
        let cfg = ProblemConfig::named("lq_double_integrator").with_param("Q", ParamValue::List(vec![q, 0.0, 0.0, q]));
        build(&cfg).unwrap()
    }

    #[test]
    fn minimum_energy_scalar_transfer() {
        let r = solve_lq_permanent(&scalar_transfer()).unwrap();
        for t in [0.0, 0.3, 1.0] {
            assert!((r.control_at(t)[0] - 1.0).abs() < 1e-14);
            assert!((r.costate_at(t)[0] - 1.0).abs() < 1e-14);
            assert!((r.state_at(t)[0] - t).abs() < 1e-14);
        }
        assert!((r.cost() - 0.5).abs() < 1e-14);
        assert_eq!(r.provenance(), Provenance::LqAnalytic);
    }

    #[test]
    fn zero_transfer_has_zero_lift() {
        let mut data = scalar_transfer();
        data.x_target = dvector![0.0];
        let r = solve_lq_permanent(&data).unwrap();
        assert_eq!(r.cost(), 0.0);
        assert_eq!(r.control_at(0.5)[0], 0.0);
        assert_eq!(r.p0(), -1.0);
    }

    #[test]
    fn double_integrator_matches_gramian_solution() {
        let data = LqProblemData::from_problem(&double_integrator(0.0)).unwrap();
        let r = solve_lq_permanent(&data).unwrap();
        // exp(As) = [[1, s], [0, 1]]; G = int_0^1 exp(As) B B' exp(A's) ds
        let gram = dmatrix![1.0 / 3.0, 0.5; 0.5, 1.0];
        let drift = dvector![1.0, 0.0]; // exp(AT) x0 - x_T
        let k = gram.lu().solve(&drift).unwrap();
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let gramian_u = -((1.0 - t) * k[0] + k[1]);
            assert!((r.control_at(t)[0] - gramian_u).abs() < 1e-10);
            assert!((r.control_at(t)[0] - (-6.0 + 12.0 * t)).abs() < 1e-10);
            let x = r.state_at(t);
            assert!((x[0] - (1.0 - 3.0 * t * t + 2.0 * t.powi(3))).abs() < 1e-10);
        }
        assert!((r.cost() - 6.0).abs() < 1e-10, "{}", r.cost());
    }

    #[test]
    fn permanent_lift_satisfies_adjoint_and_gradient_conditions() {
        let prob = double_integrator(1.0);
        let r = solve_lq_permanent(&LqProblemData::from_problem(&prob).unwrap()).unwrap();
        let e = r.to_extremal(&prob, &TimeGrid::uniform(1.0, 1024).unwrap()).unwrap();
        assert!(e.ae_residual() <= 1e-8, "{}", e.ae_residual());
        assert!(e.hg_residual().unwrap() <= 1e-8);
        assert!((r.state_at(1.0) - prob.x_target()).norm() <= 1e-10);
    }

    #[test]
    fn uncontrollable_target_is_rejected() {
        let data = LqProblemData::new(
            DMatrix::zeros(2, 2),
            dmatrix![1.0; 0.0],
            DMatrix::zeros(2, 2),
            dmatrix![1.0],
            1.0,
            dvector![0.0, 0.0],
            dvector![0.0, 1.0],
        )
        .unwrap();
        assert!(matches!(solve_lq_permanent(&data), Err(Error::Unreachable { .. })));
    }

    #[test]
    fn block_exponential_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let (n, m) = (3, 2);
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
            let lq = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let lr = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
            let q = &lq * lq.transpose();
            let r = &lr * lr.transpose() + DMatrix::identity(m, m);
            let data = LqProblemData::new(
                a.clone(),
                b.clone(),
                q.clone(),
                r.clone(),
                1.0,
                DVector::zeros(n),
                DVector::zeros(n),
            )
            .unwrap();
            let h = rng.random_range(0.05..0.7);
            let zoh = zoh_interval(&data, h);
            assert!((&zoh.e - expm(&(&a * h))).amax() < 1e-13);
            for i in 0..n {
                for j in 0..m {
                    let fij = gauss_legendre(|s| (expm(&(&a * s)) * &b)[(i, j)], 0.0, h, 32);
                    assert!((zoh.f[(i, j)] - fij).abs() < 1e-12);
                }
            }
            let integrand = |s: f64| {
                let es = expm(&(&a * s));
                let fs = DMatrix::from_fn(n, m, |i, j| gauss_legendre(|r| (expm(&(&a * r)) * &b)[(i, j)], 0.0, s, 4));
                let mut t = DMatrix::zeros(n + m, n + m);
                t.view_mut((0, 0), (n, n)).copy_from(&es);
                t.view_mut((0, n), (n, m)).copy_from(&fs);
                t.view_mut((n, n), (m, m)).fill_with_identity();
                let mut wgt = DMatrix::zeros(n + m, n + m);
                wgt.view_mut((0, 0), (n, n)).copy_from(&q);
                wgt.view_mut((n, n), (m, m)).copy_from(&r);
                t.transpose() * wgt * t
            };
            for i in 0..n + m {
                for j in 0..n + m {
                    let wij = gauss_legendre(|s| integrand(s)[(i, j)], 0.0, h, 8);
                    assert!((zoh.w[(i, j)] - wij).abs() < 1e-10, "{i} {j}");
                }
            }
        }
    }

    #[test]
    fn single_interval_transfer() {
        let data = scalar_transfer();
        let set = ControlSet::symmetric_box(1, 10.0).unwrap();
        let sol = solve_lq_sampled_exact(&data, &Partition::uniform(1, 1.0).unwrap(), &set).unwrap();
        assert!((sol.control.value(0)[0] - 1.0).abs() < 1e-13);
        assert!((sol.cost - 0.5).abs() < 1e-13);
    }

    #[test]
    fn zero_endpoints_give_zero_control() {
        let prob = build(&ProblemConfig::named("lq_generic")).unwrap();
        let data = LqProblemData::from_problem(&prob).unwrap();
        let sol = solve_lq_sampled_exact(&data, &Partition::uniform(4, 1.0).unwrap(), prob.control_set()).unwrap();
        assert!(sol.control.values().iter().all(|v| v.norm() == 0.0));
        assert_eq!(sol.cost, 0.0);
    }

    #[test]
    fn sampled_costs_decrease_toward_permanent_cost() {
        let prob = double_integrator(1.0);
        let data = LqProblemData::from_problem(&prob).unwrap();
        let permanent = solve_lq_permanent(&data).unwrap().cost();
        let mut previous = f64::INFINITY;
        for k in 1..6 {
            let sol = solve_lq_sampled_exact(&data, &Partition::uniform(1 << k, 1.0).unwrap(), prob.control_set()).unwrap();
            assert!(sol.cost < previous && sol.cost > permanent, "{} {previous} {permanent}", sol.cost);
            previous = sol.cost;
        }
    }

    #[test]
    fn oracle_satisfies_averaged_gradient_condition() {
        let prob = double_integrator(1.0);
        let data = LqProblemData::from_problem(&prob).unwrap();
        for set in [
            ControlSet::symmetric_box(1, 20.0).unwrap(),
            ControlSet::symmetric_box(1, 5.0).unwrap(),
        ] {
            let sol = solve_lq_sampled_exact(&data, &Partition::uniform(8, 1.0).unwrap(), &set).unwrap();
            let report = sol.report.as_ref().unwrap();
            assert!(report.ahg.as_ref().unwrap().sup <= 1e-8, "{}", report.to_toml_string());
            assert!(report.lift_probes.worst <= 1e-6);
            assert!(sol.diagnostics.feasibility <= 1e-10);
        }
    }

    #[test]
    fn active_bound_saturates_early_intervals() {
        // unconstrained N = 8 values span [-5.41, 5.35]; +-6 is inactive
        let prob = double_integrator(1.0);
        let data = LqProblemData::from_problem(&prob).unwrap();
        let part = Partition::uniform(8, 1.0).unwrap();
        let free = solve_lq_sampled_exact(&data, &part, prob.control_set()).unwrap();
        let six = solve_lq_sampled_exact(&data, &part, &ControlSet::symmetric_box(1, 6.0).unwrap()).unwrap();
        assert_eq!(free.control.values(), six.control.values());

        let five = ControlSet::symmetric_box(1, 5.0).unwrap();
        let boxed = solve_lq_sampled_exact(&data, &part, &five).unwrap();
        assert_eq!(boxed.control.value(0)[0], -5.0);
        assert_eq!(boxed.control.value(7)[0], 5.0);
        assert!(boxed.control.values()[1..7].iter().all(|v| v[0].abs() < 5.0));
        assert!(boxed.cost > free.cost);
        assert!(boxed.report.as_ref().unwrap().all_pass());
        let tight = ExactSampledOptions {
            budget: Some(2),
            ..ExactSampledOptions::default()
        };
        let r = solve_lq_sampled_exact_with(&data, &part, &five, &tight);
        assert!(matches!(r, Err(Error::BudgetExceeded { budget: 2 })));
    }

    #[test]
    fn surrogate_needs_fine_partition() {
        let prob = double_integrator(1.0);
        assert!(matches!(
            fine_surrogate(&prob, 64, &SolverOptions::default(), None, None),
            Err(Error::InvalidInput(_))
        ));
    }
}
