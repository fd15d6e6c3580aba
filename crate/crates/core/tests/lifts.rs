//! Solver outputs as extremal lifts, and the relations between the weak,
//! strong and sampled conditions.

mod common;

use common::catalog_problem;
use nalgebra::dvector;
use sampled_ocp::integrate::TimeGrid;
use sampled_ocp::oracles::{solve_lq_permanent, LqProblemData};
use sampled_ocp::partition::Partition;
use sampled_ocp::pmp::{certify, CheckOptions, HmOptions};
use sampled_ocp::solver::{solve, SolverOptions};

#[test]
fn catalog_solutions_are_certified_and_feasibility_improves() {
    for (name, n) in [
        ("lq_double_integrator", 8),
        ("lq_generic", 6),
        ("affine_quadratic", 8),
        ("cubic_counterexample", 4),
    ] {
        let prob = catalog_problem(name);
        let part = Partition::uniform(n, prob.horizon()).unwrap();
        let sol = solve(&prob, &part, &SolverOptions::default(), None).unwrap();
        let report = sol.report.as_ref().unwrap();
        assert!(report.ae.residual <= 1e-6, "{name}: ae {}", report.ae.residual);
        assert!(report.ahg.as_ref().unwrap().sup <= 1e-5, "{name}");
        assert!(report.all_pass(), "{name}\n{}", report.to_toml_string());
        assert_eq!(sol.costate.p0(), -1.0);

        let mut round_end = Vec::new();
        for r in &sol.log {
            if round_end.len() <= r.outer {
                round_end.resize(r.outer + 1, f64::NAN);
            }
            round_end[r.outer] = r.feasibility;
        }
        let round_end: Vec<f64> = round_end.into_iter().filter(|f| f.is_finite()).collect();
        assert!(round_end.windows(2).all(|w| w[1] < w[0] || w[1] <= 1e-8), "{name}: {round_end:?}");
    }
}

#[test]
fn strong_lift_is_weak_and_satisfies_the_lift_inequality() {
    let prob = catalog_problem("lq_double_integrator");
    let reference = solve_lq_permanent(&LqProblemData::from_problem(&prob).unwrap()).unwrap();
    let e = reference.to_extremal(&prob, &TimeGrid::uniform(1.0, 2048).unwrap()).unwrap();
    let gap = e
        .hm_gap(&HmOptions {
            points_per_dim: 2001,
            node_stride: 32,
        })
        .unwrap();
    assert!(gap.gap <= 1e-8, "{gap:?}");
    let hg = e.hg_residual().unwrap();
    assert!(hg <= 1e-8, "{hg}");
    for v in e.random_probes(100, 3, 8) {
        let z = e.lift_inequality(&v).unwrap();
        assert!(z <= 1e-6, "{z}");
    }
}

#[test]
fn needles_expose_a_non_extremal_control() {
    let prob = catalog_problem("affine_quadratic");
    let part = Partition::uniform(4, prob.horizon()).unwrap();
    let opts = SolverOptions::default();
    let sol = solve(&prob, &part, &opts, None).unwrap();
    // shifting the costate breaks (HG) somewhere
    let bad = sampled_ocp::pmp::Extremal::from_control(
        sol.extremal().unwrap().problem(),
        sol.extremal().unwrap().control().clone(),
        -1.0,
        &(sol.costate.terminal() + dvector![0.0, 5.0]),
        sol.state.grid(),
    )
    .unwrap();
    let profile = bad.hg_profile().unwrap();
    let (step, worst) = profile
        .iter()
        .enumerate()
        .fold((0, 0.0), |acc, (k, r)| if *r > acc.1 { (k, *r) } else { acc });
    assert!(worst > 0.05, "{worst}");
    let found = [-10.0, 10.0].iter().any(|w| {
        let v = bad.needle(step.min(bad.grid().steps() - 1), 4, &dvector![*w]).unwrap();
        bad.lift_inequality(&v).unwrap() > 0.0
    });
    assert!(found);
    let report = certify(&bad, &CheckOptions::default()).unwrap();
    assert!(!report.all_pass());
}
