#![allow(dead_code)]

use nalgebra::DVector;
use sampled_ocp::integrate::{integrate_state, TimeGrid};
use sampled_ocp::partition::{Partition, PiecewiseConstantControl};
use sampled_ocp::pmp::{Extremal, ExtremalControl};
use sampled_ocp::problem::{build, lookup, OcpProblem, ProblemConfig};

pub fn catalog_problem(name: &str) -> OcpProblem {
    lookup(name).unwrap().build_default().unwrap()
}

pub fn configured(cfg: ProblemConfig) -> OcpProblem {
    build(&cfg).unwrap()
}

pub fn pc(prob: &OcpProblem, values: &[f64]) -> PiecewiseConstantControl {
    let part = Partition::uniform(values.len(), prob.horizon()).unwrap();
    PiecewiseConstantControl::new(part, values.iter().map(|v| DVector::from_element(prob.control_dim(), *v)).collect()).unwrap()
}

/// Extremal-shaped object for `u`, with the target moved onto the reached
/// state so the feasibility precondition holds.
pub fn reached(prob: &OcpProblem, u: PiecewiseConstantControl, p0: f64, pt: DVector<f64>) -> Extremal {
    let grid = TimeGrid::default_for(u.partition()).unwrap();
    let x = integrate_state(prob, &u, &grid).unwrap();
    let prob = prob.with_endpoints(prob.x0().clone(), x.final_state().clone()).unwrap();
    Extremal::from_control(&prob, ExtremalControl::Sampled(u), p0, &pt, &grid).unwrap()
}

/// Composite Simpson over uniformly spaced samples (even number of steps).
pub fn simpson(values: &[DVector<f64>], h: f64) -> DVector<f64> {
    let steps = values.len() - 1;
    assert!(steps.is_multiple_of(2), "Simpson needs an even number of steps");
    let mut acc = &values[0] + &values[steps];
    for (k, v) in values.iter().enumerate().take(steps).skip(1) {
        acc += v * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * (h / 3.0)
}
