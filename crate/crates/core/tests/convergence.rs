//! Sweep rows against the sampled oracle and control recovery from costates.

mod common;

use common::catalog_problem;
use sampled_ocp::convergence::{recover_control_from_costate, sweep, ReferenceSource, SweepConfig};
use sampled_ocp::oracles::{solve_lq_permanent, solve_lq_sampled_exact, LqProblemData};
use sampled_ocp::partition::{average_onto, Partition};
use sampled_ocp::solver::{solve, SolverOptions};

#[test]
fn cost_errors_match_the_sampled_oracle() {
    let prob = catalog_problem("lq_double_integrator");
    let data = LqProblemData::from_problem(&prob).unwrap();
    let permanent = solve_lq_permanent(&data).unwrap().cost();
    let mut cfg = SweepConfig::new(prob.clone());
    cfg.ns = vec![2, 4, 8];
    cfg.comparison_nodes = 1025;
    cfg.reference = ReferenceSource::LqAnalytic;
    // terminal slack times the multiplier bounds the cost mismatch
    cfg.solver.feas_tol = 1e-11;
    cfg.solver.stat_tol = 1e-10;
    let report = sweep(&cfg).unwrap();
    for row in &report.rows {
        let oracle = solve_lq_sampled_exact(&data, &Partition::uniform(row.n, 1.0).unwrap(), prob.control_set()).unwrap();
        let expected = (oracle.cost - permanent).abs();
        assert!(
            (row.cost_err - expected).abs() <= 1e-8,
            "N = {}: {} vs {}",
            row.n,
            row.cost_err,
            expected
        );
    }
}

#[test]
fn recovered_controls_average_to_sampled_values() {
    let prob = catalog_problem("affine_quadratic");
    let mut gaps = Vec::new();
    for n in [4, 8, 16] {
        let part = Partition::uniform(n, prob.horizon()).unwrap();
        let sol = solve(&prob, &part, &SolverOptions::default(), None).unwrap();
        let dense = recover_control_from_costate(&prob, &sol.state, &sol.costate).unwrap();
        let avg = average_onto(&dense, &part).unwrap();
        let gap = avg
            .values()
            .iter()
            .zip(sol.control.values())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        gaps.push(gap);
    }
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(gaps[2] < 1e-2, "{gaps:?}");
}
