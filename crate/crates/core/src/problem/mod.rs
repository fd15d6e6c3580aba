//! Optimal control problem instances.
//!
//! A problem couples a [`Model`] (dynamics `f`, running cost `L` and their
//! first derivatives) with a horizon, both endpoints of the state and a
//! convex compact [`ControlSet`].

mod catalog;
mod config;
mod control_set;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use catalog::{
    build, catalog, lookup, AffineQuadraticPendulum, CubicCounterexample, LinearQuadratic, ProblemCatalogEntry, ReferenceKind,
};
pub use config::{ParamValue, ProblemConfig};
pub use control_set::{ControlFactor, ControlSet, ControlSetConfig, TOL_SET};

/// Constant matrices of a linear-quadratic model
/// `f = A x + B u`, `L = (x'Qx + u'Ru) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Control-affine dynamics with a cost quadratic in the control:
/// `f = G(x,t) u + d(x,t)`, `L = u'R(t)u/2 + <c(x,t), u> + s(x,t)`.
pub trait AffineQuadratic {
    /// `G(x,t)`, n x m.
    fn input_matrix(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64>;
    /// `R(t)`, symmetric m x m.
    fn control_weight(&self, t: f64) -> DMatrix<f64>;
    /// `c(x,t)`, the cross term between state and control in `L`.
    fn linear_weight(&self, x: &DVector<f64>, t: f64) -> DVector<f64>;
}

/// Forward step used by finite-difference Jacobians.
pub fn fd_step(arg: &DVector<f64>) -> f64 {
    1e-6 * (1.0 + arg.norm())
}

/// Central finite-difference Jacobian of a vector map.
pub fn fd_jacobian<F>(f: F, at: &DVector<f64>, step: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let f0 = f(at);
    let mut jac = DMatrix::zeros(f0.len(), at.len());
    let mut probe = at.clone();
    for j in 0..at.len() {
        probe[j] = at[j] + step;
        let fp = f(&probe);
        probe[j] = at[j] - step;
        let fm = f(&probe);
        probe[j] = at[j];
        jac.set_column(j, &((fp - fm) / (2.0 * step)));
    }
    jac
}

/// Central finite-difference gradient of a scalar map.
pub fn fd_gradient<F>(f: F, at: &DVector<f64>, step: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut grad = DVector::zeros(at.len());
    let mut probe = at.clone();
    for j in 0..at.len() {
        probe[j] = at[j] + step;
        let fp = f(&probe);
        probe[j] = at[j] - step;
        let fm = f(&probe);
        probe[j] = at[j];
        grad[j] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Dynamics and running cost of a control system.
///
/// Only `dynamics` and `running_cost` are mandatory; the derivative methods
/// default to central finite differences with step `1e-6 (1 + |arg|)`.
/// Implementations must be deterministic and free of side effects.
pub trait Model: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DVector<f64>;
    fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> f64;

    fn dynamics_jac_x(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DMatrix<f64> {
        fd_jacobian(|y| self.dynamics(y, u, t), x, fd_step(x))
    }

    fn dynamics_jac_u(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DMatrix<f64> {
        fd_jacobian(|v| self.dynamics(x, v, t), u, fd_step(u))
    }

    fn cost_grad_x(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DVector<f64> {
        fd_gradient(|y| self.running_cost(y, u, t), x, fd_step(x))
    }

    fn cost_grad_u(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DVector<f64> {
        fd_gradient(|v| self.running_cost(x, v, t), u, fd_step(u))
    }

    /// Constant LQ data, when the model is linear-quadratic.
    fn lq_matrices(&self) -> Option<LqMatrices> {
        None
    }

    /// Control-affine/quadratic structure, when available.
    fn affine_quadratic(&self) -> Option<&dyn AffineQuadratic> {
        None
    }
}

/// An optimal control problem with fixed endpoints on `[0, T]`.
#[derive(Clone)]
pub struct OcpProblem {
    name: String,
    model: Arc<dyn Model>,
    horizon: f64,
    x0: DVector<f64>,
    x_target: DVector<f64>,
    control_set: ControlSet,
    config: Option<ProblemConfig>,
}

impl fmt::Debug for OcpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OcpProblem")
            .field("name", &self.name)
            .field("model", &self.model)
            .field("horizon", &self.horizon)
            .field("x0", &self.x0.as_slice())
            .field("x_target", &self.x_target.as_slice())
            .field("control_set", &self.control_set)
            .finish()
    }
}

impl OcpProblem {
    pub fn new(
        name: impl Into<String>,
        model: Arc<dyn Model>,
        horizon: f64,
        x0: DVector<f64>,
        x_target: DVector<f64>,
        control_set: ControlSet,
    ) -> Result<Self> {
        let n = model.state_dim();
        let m = model.control_dim();
        if n == 0 || m == 0 {
            return Err(Error::InvalidInput("state and control dimensions must be positive".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidInput(format!("horizon must be finite and > 0 (got {horizon})")));
        }
        if x0.len() != n || x_target.len() != n {
            return Err(Error::InvalidInput(format!(
                "endpoints must have dimension {n} (got x0: {}, xT: {})",
                x0.len(),
                x_target.len()
            )));
        }
        if x0.iter().chain(x_target.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("endpoints must be finite".into()));
        }
        if control_set.dim() != m {
            return Err(Error::InvalidInput(format!(
                "control set has dimension {} but the model expects {m}",
                control_set.dim()
            )));
        }
        Ok(Self {
            name: name.into(),
            model,
            horizon,
            x0,
            x_target,
            control_set,
            config: None,
        })
    }

    pub(crate) fn with_config(mut self, config: ProblemConfig) -> Self {
        self.config = Some(config);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn model(&self) -> &dyn Model {
        self.model.as_ref()
    }
    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }
    pub fn control_dim(&self) -> usize {
        self.model.control_dim()
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }
    pub fn x_target(&self) -> &DVector<f64> {
        &self.x_target
    }
    pub fn control_set(&self) -> &ControlSet {
        &self.control_set
    }
    /// Configuration the problem was built from, if it came from the catalog.
    pub fn config(&self) -> Option<&ProblemConfig> {
        self.config.as_ref()
    }

    pub fn f(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DVector<f64> {
        self.model.dynamics(x, u, t)
    }
    pub fn cost(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> f64 {
        self.model.running_cost(x, u, t)
    }
    pub fn f_x(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DMatrix<f64> {
        self.model.dynamics_jac_x(x, u, t)
    }
    pub fn f_u(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DMatrix<f64> {
        self.model.dynamics_jac_u(x, u, t)
    }
    pub fn cost_x(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DVector<f64> {
        self.model.cost_grad_x(x, u, t)
    }
    pub fn cost_u(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DVector<f64> {
        self.model.cost_grad_u(x, u, t)
    }

    /// Copy of the problem with different endpoints.
    pub fn with_endpoints(&self, x0: DVector<f64>, x_target: DVector<f64>) -> Result<Self> {
        let mut p = OcpProblem::new(
            self.name.clone(),
            self.model.clone(),
            self.horizon,
            x0,
            x_target,
            self.control_set.clone(),
        )?;
        p.config = self.config.clone().map(|mut c| {
            c.x0 = Some(p.x0.as_slice().to_vec());
            c.x_target = Some(p.x_target.as_slice().to_vec());
            c
        });
        Ok(p)
    }

    /// Copy of the problem with a different control set.
    pub fn with_control_set(&self, control_set: ControlSet) -> Result<Self> {
        let mut p = OcpProblem::new(
            self.name.clone(),
            self.model.clone(),
            self.horizon,
            self.x0.clone(),
            self.x_target.clone(),
            control_set,
        )?;
        p.config = self.config.clone().map(|mut c| {
            c.control_set = Some(p.control_set.to_config());
            c
        });
        Ok(p)
    }
}
