//! Exit codes and outputs of the command-line tool.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::catalog_problem;
use nalgebra::dvector;
use sampled_ocp::bundle::{read_summary, write_bundle, COSTATE_FILE};
use sampled_ocp::integrate::TimeGrid;
use sampled_ocp::oracles::{solve_lq_sampled_exact, LqProblemData};
use sampled_ocp::partition::{Partition, PiecewiseConstantControl};
use sampled_ocp::pmp::{Extremal, ExtremalControl};

fn run(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sampled-ocp"));
    cmd.args(args).env_remove("SAMPLED_OCP_OUT");
    if let Some(dir) = env_out {
        cmd.env("SAMPLED_OCP_OUT", dir);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn cubic_weak_bundle(dir: &Path) {
    let prob = catalog_problem("cubic_counterexample");
    let part = Partition::uniform(4, 1.0).unwrap();
    let u = PiecewiseConstantControl::constant(part.clone(), dvector![0.0]).unwrap();
    let grid = TimeGrid::default_for(&part).unwrap();
    let e = Extremal::from_control(&prob, ExtremalControl::Sampled(u), -1.0, &dvector![1.0], &grid).unwrap();
    write_bundle(dir, &e, None, None).unwrap();
}

#[test]
fn solve_writes_a_certified_bundle_matching_the_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("lq");
    let out = run(&["solve", "--problem", "lq_double_integrator", "--N", "8", "--out", s(&dir)], None);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = read_summary(&dir).unwrap();
    let prob = catalog_problem("lq_double_integrator");
    let data = LqProblemData::from_problem(&prob).unwrap();
    let oracle = solve_lq_sampled_exact(&data, &Partition::uniform(8, 1.0).unwrap(), prob.control_set()).unwrap();
    assert!((summary.solve.unwrap().cost - oracle.cost).abs() <= 1e-6);
    assert!(summary.residuals.unwrap().all_pass());

    let checked = run(&["check", s(&dir), "--out", s(&tmp.path().join("res"))], None);
    assert_eq!(code(&checked), 0, "{}", stderr(&checked));
    assert!(tmp.path().join("res/residuals.toml").exists());
}

#[test]
fn solve_cubic_with_zero_control() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["solve", "--problem", "cubic_counterexample", "--N", "4"], Some(tmp.path()));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = read_summary(&tmp.path().join("solve-cubic_counterexample-N4")).unwrap();
    assert_eq!(summary.solve.unwrap().cost, 0.0);
}

#[test]
fn solve_accepts_a_times_file() {
    let tmp = tempfile::tempdir().unwrap();
    let times = tmp.path().join("times.txt");
    std::fs::write(&times, "0 0.2 0.5\n0.6, 1.0\n").unwrap();
    let out = run(
        &[
            "solve",
            "--problem",
            "lq_double_integrator",
            "--times-file",
            s(&times),
            "--out",
            s(&tmp.path().join("b")),
        ],
        None,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read_summary(&tmp.path().join("b")).unwrap().intervals, 4);
    std::fs::write(&times, "0 0.5 0.9\n").unwrap();
    let short = run(
        &["solve", "--problem", "lq_double_integrator", "--times-file", s(&times)],
        Some(tmp.path()),
    );
    assert_eq!(code(&short), 1);
}

#[test]
fn usage_and_input_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let missing_n = run(&["solve", "--problem", "lq_double_integrator"], Some(tmp.path()));
    assert_eq!(code(&missing_n), 1);
    assert!(stderr(&missing_n).contains("--N"));

    let unknown = run(&["converge", "--problem", "nonexistent"], Some(tmp.path()));
    assert_eq!(code(&unknown), 1);
    assert!(stderr(&unknown).contains("nonexistent"));

    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "problem = \"lq_generic\"\nhorizon = [1.0\n").unwrap();
    let bad = run(&["solve", "--config", s(&cfg), "--N", "4"], Some(tmp.path()));
    assert_eq!(code(&bad), 1);
    assert!(stderr(&bad).contains("line 2"), "{}", stderr(&bad));

    assert_eq!(code(&run(&["frobnicate"], None)), 1);
    assert_eq!(code(&run(&["solve", "--problem", "a", "--config", "b", "--N", "2"], None)), 1);
    assert_eq!(code(&run(&["check", s(&tmp.path().join("nowhere"))], None)), 1);
}

#[test]
fn corrupted_costate_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    cubic_weak_bundle(tmp.path());
    let path = tmp.path().join(COSTATE_FILE);
    let text = std::fs::read_to_string(&path).unwrap().replacen("\n0.", "\nzero.", 1);
    std::fs::write(&path, text).unwrap();
    let out = run(&["check", s(tmp.path())], None);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("costate.csv"));
}

#[test]
fn unreachable_target_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("far.toml");
    std::fs::write(&cfg, "problem = \"cubic_counterexample\"\nxT = [5.0]\n").unwrap();
    let out = run(&["solve", "--config", s(&cfg), "--N", "4"], Some(tmp.path()));
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn weak_lift_fails_the_strong_check() {
    let tmp = tempfile::tempdir().unwrap();
    cubic_weak_bundle(tmp.path());
    let weak = run(&["check", s(tmp.path())], None);
    assert_eq!(code(&weak), 0, "{}", stdout(&weak));
    let strong = run(&["check", s(tmp.path()), "--require-hm"], None);
    assert_eq!(code(&strong), 3);
    let report: sampled_ocp::pmp::ResidualReport = toml::from_str(&stdout(&strong)).unwrap();
    let gap = report.hm.unwrap().gap;
    assert!((0.99..=1.01).contains(&gap), "{gap}");
}

#[test]
fn infeasible_bundle_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    cubic_weak_bundle(tmp.path());
    let summary = tmp.path().join("summary.toml");
    let text = std::fs::read_to_string(&summary).unwrap().replace(
        "[problem]\nproblem = \"cubic_counterexample\"",
        "[problem]\nproblem = \"cubic_counterexample\"\nxT = [0.5]",
    );
    std::fs::write(&summary, text).unwrap();
    let out = run(&["check", s(tmp.path())], None);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn single_row_sweep_reports_unavailable_rates() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["converge", "--problem", "lq_double_integrator", "--Ns", "8"], Some(tmp.path()));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("rates: cost_err n/a"));
    let dir = tmp.path().join("converge-lq_double_integrator");
    let csv = std::fs::read_to_string(dir.join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(std::fs::read_to_string(dir.join("convergence_summary.toml"))
        .unwrap()
        .contains("\"n/a\""));
}

#[test]
fn rejected_surrogate_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "converge",
            "--problem",
            "affine_quadratic",
            "--Ns",
            "2",
            "--n-ref",
            "256",
            "--surrogate-factor",
            "1e-6",
        ],
        Some(tmp.path()),
    );
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("reference rejected"));
}

#[test]
fn catalog_and_help() {
    let out = run(&["catalog"], None);
    assert_eq!(code(&out), 0);
    for name in ["cubic_counterexample", "lq_double_integrator", "lq_generic", "affine_quadratic"] {
        assert!(stdout(&out).contains(name));
    }
    assert_eq!(code(&run(&["--help"], None)), 0);
}
