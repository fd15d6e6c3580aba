//! Built-in test problems.

use std::sync::Arc;

use nalgebra::{dvector, DMatrix, DVector};

use super::config::{ParamValue, ProblemConfig};
use super::control_set::ControlSet;
use super::{AffineQuadratic, LqMatrices, Model, OcpProblem};
use crate::error::{Error, Result};

/// Which kind of reference solution is available for a catalog entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    /// Analytic LQ reference from the Hamiltonian two-point boundary-value system.
    LqExact,
    /// Very fine sampled solution used as a stand-in for the permanent one.
    FinePartitionSurrogate,
    None,
}

impl ReferenceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReferenceKind::LqExact => "lq_exact",
            ReferenceKind::FinePartitionSurrogate => "fine_partition_surrogate",
            ReferenceKind::None => "none",
        }
    }
}

pub struct ProblemCatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub reference_kind: ReferenceKind,
    pub params: &'static [&'static str],
    builder: fn(&ProblemConfig) -> Result<OcpProblem>,
}

impl ProblemCatalogEntry {
    pub fn build(&self, cfg: &ProblemConfig) -> Result<OcpProblem> {
        for key in cfg.params.keys() {
            if !self.params.contains(&key.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "problem `{}` has no parameter `{key}` (known: {})",
                    self.name,
                    self.params.join(", ")
                )));
            }
        }
        Ok((self.builder)(cfg)?.with_config(cfg.clone()))
    }

    /// Instance with every parameter at its default.
    pub fn build_default(&self) -> Result<OcpProblem> {
        self.build(&ProblemConfig::named(self.name))
    }
}

pub fn catalog() -> Vec<ProblemCatalogEntry> {
    vec![
        ProblemCatalogEntry {
            name: "cubic_counterexample",
            description: "n = m = 1, f = u^3, L = 0, U = [-1, 1], x0 = xT = 0, T = 1",
            reference_kind: ReferenceKind::None,
            params: &[],
            builder: build_cubic,
        },
        ProblemCatalogEntry {
            name: "lq_double_integrator",
            description: "x1' = x2, x2' = u, L = (x'Qx + R u^2)/2; params Q (2x2), R",
            reference_kind: ReferenceKind::LqExact,
            params: &["Q", "R"],
            builder: build_double_integrator,
        },
        ProblemCatalogEntry {
            name: "lq_generic",
            description: "x' = Ax + Bu, L = (x'Qx + u'Ru)/2; params A, B, Q, R (row-major)",
            reference_kind: ReferenceKind::LqExact,
            params: &["A", "B", "Q", "R"],
            builder: build_lq_generic,
        },
        ProblemCatalogEntry {
            name: "affine_quadratic",
            description: "damped pendulum with state-dependent input gain and time-varying quadratic control cost",
            reference_kind: ReferenceKind::FinePartitionSurrogate,
            params: &["omega_sq", "damping", "gain_mod", "r", "r_mod", "cross", "state_weight"],
            builder: build_affine_quadratic,
        },
    ]
}

pub fn lookup(name: &str) -> Result<ProblemCatalogEntry> {
    catalog()
        .into_iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::UnknownProblem(name.to_string()))
}

/// Build a problem from a configuration.
pub fn build(cfg: &ProblemConfig) -> Result<OcpProblem> {
    lookup(&cfg.problem)?.build(cfg)
}

fn endpoints(cfg: &ProblemConfig, n: usize, x0: DVector<f64>, xt: DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let pick = |v: &Option<Vec<f64>>, default: DVector<f64>, name: &str| -> Result<DVector<f64>> {
        match v {
            None => Ok(default),
            Some(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
            Some(v) => Err(Error::InvalidInput(format!("{name} must have {n} entries, got {}", v.len()))),
        }
    };
    Ok((pick(&cfg.x0, x0, "x0")?, pick(&cfg.x_target, xt, "xT")?))
}

fn control_set(cfg: &ProblemConfig, default: ControlSet) -> Result<ControlSet> {
    match &cfg.control_set {
        Some(c) => c.build(),
        None => Ok(default),
    }
}

fn param<'a>(cfg: &'a ProblemConfig, name: &str) -> Option<&'a ParamValue> {
    cfg.params.get(name)
}

fn scalar_or(cfg: &ProblemConfig, name: &str, default: f64) -> Result<f64> {
    param(cfg, name).map_or(Ok(default), |v| v.scalar(name))
}

/// `f = u^3`, `L = 0`.
#[derive(Debug, Clone, Copy)]
pub struct CubicCounterexample;

impl Model for CubicCounterexample {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn dynamics(&self, _x: &DVector<f64>, u: &DVector<f64>, _t: f64) -> DVector<f64> {
        dvector![u[0].powi(3)]
    }
    fn running_cost(&self, _x: &DVector<f64>, _u: &DVector<f64>, _t: f64) -> f64 {
        0.0
    }
    fn dynamics_jac_x(&self, _x: &DVector<f64>, _u: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
    fn dynamics_jac_u(&self, _x: &DVector<f64>, u: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 3.0 * u[0] * u[0])
    }
    fn cost_grad_x(&self, _x: &DVector<f64>, _u: &DVector<f64>, _t: f64) -> DVector<f64> {
        DVector::zeros(1)
    }
    fn cost_grad_u(&self, _x: &DVector<f64>, _u: &DVector<f64>, _t: f64) -> DVector<f64> {
        DVector::zeros(1)
    }
}

fn build_cubic(cfg: &ProblemConfig) -> Result<OcpProblem> {
    let (x0, xt) = endpoints(cfg, 1, dvector![0.0], dvector![0.0])?;
    let set = control_set(cfg, ControlSet::symmetric_box(1, 1.0)?)?;
    OcpProblem::new(
        "cubic_counterexample",
        Arc::new(CubicCounterexample),
        cfg.horizon.unwrap_or(1.0),
        x0,
        xt,
        set,
    )
}

/// Time-invariant linear dynamics with pure quadratic cost.
#[derive(Debug, Clone)]
pub struct LinearQuadratic {
    m: LqMatrices,
}

impl LinearQuadratic {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let mdim = b.ncols();
        if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (mdim, mdim) {
            return Err(Error::InvalidInput(format!(
                "inconsistent LQ shapes: A {:?}, B {:?}, Q {:?}, R {:?}",
                a.shape(),
                b.shape(),
                q.shape(),
                r.shape()
            )));
        }
        if (&q - q.transpose()).abs().max() > 1e-12 || (&r - r.transpose()).abs().max() > 1e-12 {
            return Err(Error::InvalidInput("Q and R must be symmetric".into()));
        }
        if q.clone().symmetric_eigenvalues().min() < -1e-12 {
            return Err(Error::InvalidInput("Q must be positive semidefinite".into()));
        }
        if r.clone().cholesky().is_none() {
            return Err(Error::InvalidInput("R must be positive definite".into()));
        }
        Ok(Self {
            m: LqMatrices { a, b, q, r },
        })
    }

    pub fn matrices(&self) -> &LqMatrices {
        &self.m
    }
}

impl Model for LinearQuadratic {
    fn state_dim(&self) -> usize {
        self.m.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.m.b.ncols()
    }
    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>, _t: f64) -> DVector<f64> {
        &self.m.a * x + &self.m.b * u
    }
    fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>, _t: f64) -> f64 {
        0.5 * (x.dot(&(&self.m.q * x)) + u.dot(&(&self.m.r * u)))
    }
    fn dynamics_jac_x(&self, _x: &DVector<f64>, _u: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        self.m.a.clone()
    }
    fn dynamics_jac_u(&self, _x: &DVector<f64>, _u: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        self.m.b.clone()
    }
    fn cost_grad_x(&self, x: &DVector<f64>, _u: &DVector<f64>, _t: f64) -> DVector<f64> {
        &self.m.q * x
    }
    fn cost_grad_u(&self, _x: &DVector<f64>, u: &DVector<f64>, _t: f64) -> DVector<f64> {
        &self.m.r * u
    }
    fn lq_matrices(&self) -> Option<LqMatrices> {
        Some(self.m.clone())
    }
    fn affine_quadratic(&self) -> Option<&dyn AffineQuadratic> {
        Some(self)
    }
}

impl AffineQuadratic for LinearQuadratic {
    fn input_matrix(&self, _x: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        self.m.b.clone()
    }
    fn control_weight(&self, _t: f64) -> DMatrix<f64> {
        self.m.r.clone()
    }
    fn linear_weight(&self, _x: &DVector<f64>, _t: f64) -> DVector<f64> {
        DVector::zeros(self.m.b.ncols())
    }
}

fn build_double_integrator(cfg: &ProblemConfig) -> Result<OcpProblem> {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let q = match param(cfg, "Q") {
        Some(v) => v.matrix("Q", 2, 2)?,
        None => DMatrix::identity(2, 2),
    };
    let r = match param(cfg, "R") {
        Some(v) => v.matrix("R", 1, 1)?,
        None => DMatrix::identity(1, 1),
    };
    let model = LinearQuadratic::new(a, b, q, r)?;
    let (x0, xt) = endpoints(cfg, 2, dvector![1.0, 0.0], dvector![0.0, 0.0])?;
    let set = control_set(cfg, ControlSet::symmetric_box(1, 20.0)?)?;
    OcpProblem::new("lq_double_integrator", Arc::new(model), cfg.horizon.unwrap_or(1.0), x0, xt, set)
}

fn build_lq_generic(cfg: &ProblemConfig) -> Result<OcpProblem> {
    // state dimension from A, else x0, else 1
    let n = match (param(cfg, "A"), &cfg.x0) {
        (Some(a), _) => {
            let len = a.flat().len();
            let n = (len as f64).sqrt().round() as usize;
            if n * n != len {
                return Err(Error::InvalidInput("param `A` must be square".into()));
            }
            n
        }
        (None, Some(x0)) => x0.len(),
        (None, None) => 1,
    };
    let a = match param(cfg, "A") {
        Some(v) => v.matrix("A", n, n)?,
        None => DMatrix::zeros(n, n),
    };
    let b = match param(cfg, "B") {
        Some(v) => {
            let len = v.flat().len();
            if len % n != 0 {
                return Err(Error::InvalidInput(format!("param `B` must have a multiple of {n} entries")));
            }
            v.matrix("B", n, len / n)?
        }
        None => DMatrix::identity(n, n),
    };
    let m = b.ncols();
    let q = match param(cfg, "Q") {
        Some(v) => v.matrix("Q", n, n)?,
        None => DMatrix::identity(n, n),
    };
    let r = match param(cfg, "R") {
        Some(v) => v.matrix("R", m, m)?,
        None => DMatrix::identity(m, m),
    };
    let model = LinearQuadratic::new(a, b, q, r)?;
    let (x0, xt) = endpoints(cfg, n, DVector::zeros(n), DVector::zeros(n))?;
    let set = control_set(cfg, ControlSet::symmetric_box(m, 10.0)?)?;
    OcpProblem::new("lq_generic", Arc::new(model), cfg.horizon.unwrap_or(1.0), x0, xt, set)
}

/// Damped pendulum with state-dependent input gain:
///
/// ```text
/// x1' = x2
/// x2' = -omega_sq sin(x1) - damping x2 + (1 + gain_mod cos(x1)) u
/// L   = r (1 + r_mod sin t) u^2 / 2 + cross x1 u + state_weight |x|^2 / 2
/// ```
#[derive(Debug, Clone)]
pub struct AffineQuadraticPendulum {
    pub omega_sq: f64,
    pub damping: f64,
    pub gain_mod: f64,
    pub r: f64,
    pub r_mod: f64,
    pub cross: f64,
    pub state_weight: f64,
}

impl Default for AffineQuadraticPendulum {
    fn default() -> Self {
        Self {
            omega_sq: 1.0,
            damping: 0.1,
            gain_mod: 0.2,
            r: 1.0,
            r_mod: 0.25,
            cross: 0.1,
            state_weight: 1.0,
        }
    }
}

impl AffineQuadraticPendulum {
    fn weight(&self, t: f64) -> f64 {
        self.r * (1.0 + self.r_mod * t.sin())
    }
    fn gain(&self, x1: f64) -> f64 {
        1.0 + self.gain_mod * x1.cos()
    }
}

impl Model for AffineQuadraticPendulum {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>, _t: f64) -> DVector<f64> {
        dvector![x[1], -self.omega_sq * x[0].sin() - self.damping * x[1] + self.gain(x[0]) * u[0]]
    }
    fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> f64 {
        0.5 * self.weight(t) * u[0] * u[0] + self.cross * x[0] * u[0] + 0.5 * self.state_weight * (x[0] * x[0] + x[1] * x[1])
    }
    fn dynamics_jac_x(&self, x: &DVector<f64>, u: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            2,
            2,
            &[
                0.0,
                1.0,
                -self.omega_sq * x[0].cos() - self.gain_mod * x[0].sin() * u[0],
                -self.damping,
            ],
        )
    }
    fn dynamics_jac_u(&self, x: &DVector<f64>, _u: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 1, &[0.0, self.gain(x[0])])
    }
    fn cost_grad_x(&self, x: &DVector<f64>, u: &DVector<f64>, _t: f64) -> DVector<f64> {
        dvector![self.cross * u[0] + self.state_weight * x[0], self.state_weight * x[1]]
    }
    fn cost_grad_u(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DVector<f64> {
        dvector![self.weight(t) * u[0] + self.cross * x[0]]
    }
    fn affine_quadratic(&self) -> Option<&dyn AffineQuadratic> {
        Some(self)
    }
}

impl AffineQuadratic for AffineQuadraticPendulum {
    fn input_matrix(&self, x: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 1, &[0.0, self.gain(x[0])])
    }
    fn control_weight(&self, t: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.weight(t))
    }
    fn linear_weight(&self, x: &DVector<f64>, _t: f64) -> DVector<f64> {
        dvector![self.cross * x[0]]
    }
}

fn build_affine_quadratic(cfg: &ProblemConfig) -> Result<OcpProblem> {
    let d = AffineQuadraticPendulum::default();
    let model = AffineQuadraticPendulum {
        omega_sq: scalar_or(cfg, "omega_sq", d.omega_sq)?,
        damping: scalar_or(cfg, "damping", d.damping)?,
        gain_mod: scalar_or(cfg, "gain_mod", d.gain_mod)?,
        r: scalar_or(cfg, "r", d.r)?,
        r_mod: scalar_or(cfg, "r_mod", d.r_mod)?,
        cross: scalar_or(cfg, "cross", d.cross)?,
        state_weight: scalar_or(cfg, "state_weight", d.state_weight)?,
    };
    if model.r <= 0.0 || model.r_mod.abs() >= 1.0 {
        return Err(Error::InvalidInput("affine_quadratic needs r > 0 and |r_mod| < 1".into()));
    }
    if model.gain_mod.abs() >= 1.0 {
        return Err(Error::InvalidInput("affine_quadratic needs |gain_mod| < 1".into()));
    }
    let (x0, xt) = endpoints(cfg, 2, dvector![1.0, 0.0], dvector![0.0, 0.0])?;
    let set = control_set(cfg, ControlSet::symmetric_box(1, 10.0)?)?;
    OcpProblem::new("affine_quadratic", Arc::new(model), cfg.horizon.unwrap_or(1.0), x0, xt, set)
}
