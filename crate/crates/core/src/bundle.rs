//! On-disk solution bundles: `control.csv`, `state.csv`, `costate.csv` and
//! `summary.toml`. The summary embeds the problem configuration, so a bundle
//! can be re-checked without any other input.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{CostateTrajectory, Trajectory};
use crate::partition::PiecewiseConstantControl;
use crate::pmp::{Extremal, ExtremalControl, ResidualReport};
use crate::problem::{build, ProblemConfig};

pub const CONTROL_FILE: &str = "control.csv";
pub const STATE_FILE: &str = "state.csv";
pub const COSTATE_FILE: &str = "costate.csv";
pub const SUMMARY_FILE: &str = "summary.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub cost: f64,
    pub feasibility: f64,
    pub stationarity: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub multiplier: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleSummary {
    pub intervals: usize,
    pub partition_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residuals: Option<ResidualReport>,
    pub problem: ProblemConfig,
}

/// Write an extremal with a sampled control; the directory is created if
/// needed.
pub fn write_bundle(dir: &Path, e: &Extremal, solve: Option<SolveSummary>, residuals: Option<&ResidualReport>) -> Result<()> {
    let control = e
        .control()
        .as_sampled()
        .ok_or_else(|| Error::InvalidInput("bundles store piecewise-constant controls only".into()))?;
    let problem = e
        .problem()
        .config()
        .cloned()
        .ok_or_else(|| Error::InvalidInput("problem has no configuration to embed".into()))?;
    std::fs::create_dir_all(dir)?;
    control.write_csv(&dir.join(CONTROL_FILE))?;
    e.state().write_csv(&dir.join(STATE_FILE))?;
    e.costate().write_csv(&dir.join(COSTATE_FILE))?;
    let summary = BundleSummary {
        intervals: control.partition().intervals(),
        partition_norm: control.partition().norm(),
        solve,
        residuals: residuals.cloned(),
        problem,
    };
    let text = toml::to_string(&summary).map_err(|e| Error::InvalidInput(format!("summary serialization: {e}")))?;
    std::fs::write(dir.join(SUMMARY_FILE), text)?;
    Ok(())
}

pub fn read_summary(dir: &Path) -> Result<BundleSummary> {
    let path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path)?;
    toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

/// Rebuild the extremal stored in `dir`; slopes are recomputed from the
/// dynamics and the adjoint equation.
pub fn read_bundle(dir: &Path) -> Result<(BundleSummary, Extremal)> {
    let summary = read_summary(dir)?;
    let prob = build(&summary.problem)?;
    let (n, m) = (prob.state_dim(), prob.control_dim());
    let control = PiecewiseConstantControl::read_csv(&dir.join(CONTROL_FILE), m)?;
    let (grid, states) = Trajectory::read_csv(&dir.join(STATE_FILE), n)?;
    let costate_path = dir.join(COSTATE_FILE);
    let (times, values, p0) = CostateTrajectory::read_csv(&costate_path, n)?;
    if times.as_slice() != grid.times() {
        return Err(Error::parse(
            costate_path.display().to_string(),
            "time column differs from state.csv",
        ));
    }
    let x = Trajectory::from_samples(&prob, &control, grid, states)?;
    let p = CostateTrajectory::from_samples(&prob, &x, &control, p0, values)?;
    let e = Extremal::new(prob, ExtremalControl::Sampled(control), x, p)?;
    Ok((summary, e))
}
