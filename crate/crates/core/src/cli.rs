//! Command-line front end. Exit codes: 0 success, 1 usage or input error,
//! 2 solver failure, 3 certification or acceptance failure, 4 reference
//! rejected.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bundle::{read_bundle, write_bundle, SolveSummary};
use crate::convergence::{sweep, ReferenceSource, SweepConfig, WarmStart};
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::pmp::{certify, CheckOptions};
use crate::problem::{build, catalog, OcpProblem, ProblemConfig};
use crate::solver::{solve, SolverOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_CERTIFICATION: i32 = 3;
pub const EXIT_REFERENCE: i32 = 4;

/// Default output root when `--out` is absent.
pub const OUT_ENV: &str = "SAMPLED_OCP_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "sampled-ocp",
    version,
    about = "Sampled-data optimal control: solve, certify, and run convergence sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve on one partition and write a solution bundle.
    Solve(SolveArgs),
    /// Certify a stored bundle.
    Check(CheckArgs),
    /// Run a partition-refinement sweep against a permanent reference.
    Converge(ConvergeArgs),
    /// List catalog problems.
    Catalog,
}

#[derive(Debug, Args)]
struct ProblemArgs {
    /// Catalog problem name.
    #[arg(long, conflicts_with = "config")]
    problem: Option<String>,
    /// Problem configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long)]
    feas_tol: Option<f64>,
    #[arg(long)]
    stat_tol: Option<f64>,
    /// Largest integration step.
    #[arg(long)]
    h_max: Option<f64>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Number of uniform sampling intervals.
    #[arg(long = "N", conflicts_with = "times_file")]
    n: Option<usize>,
    /// Sampling times, whitespace or comma separated, from 0 to the horizon.
    #[arg(long)]
    times_file: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    require_hm: bool,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// Bundle directory.
    bundle: PathBuf,
    #[arg(long)]
    require_hm: bool,
    /// Also write the residual report to `<out>/residuals.toml`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WarmStartArg {
    Cold,
    Cascade,
}

#[derive(Debug, Args)]
struct ConvergeArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Comma-separated, strictly increasing interval counts.
    #[arg(long = "Ns", value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, value_enum, default_value = "cascade")]
    warm_start: WarmStartArg,
    /// Fine-surrogate reference with this many intervals.
    #[arg(long)]
    n_ref: Option<usize>,
    /// Reject the surrogate when its error bar exceeds this multiple of the
    /// smallest row state error.
    #[arg(long, default_value_t = crate::convergence::DEFAULT_SURROGATE_FACTOR)]
    surrogate_factor: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Solve(a) => run_solve(a),
        Command::Check(a) => run_check(a),
        Command::Converge(a) => run_converge(a),
        Command::Catalog => run_catalog(),
    }
}

fn fail(code: i32, e: &Error) -> i32 {
    eprintln!("error: {e}");
    code
}

/// Exit code for errors raised while loading, solving or sweeping.
fn code_for(e: &Error) -> i32 {
    match e {
        Error::Parse { .. } | Error::InvalidInput(_) | Error::UnknownProblem(_) | Error::Io(_) | Error::MisalignedGrid(_) => EXIT_USAGE,
        Error::ReferenceRejected { .. } => EXIT_REFERENCE,
        _ => EXIT_SOLVER,
    }
}

fn load_problem(a: &ProblemArgs) -> Result<OcpProblem> {
    let cfg = match (&a.problem, &a.config) {
        (Some(name), None) => ProblemConfig::named(name.clone()),
        (None, Some(path)) => ProblemConfig::load(path)?,
        _ => return Err(Error::InvalidInput("exactly one of --problem or --config is required".into())),
    };
    build(&cfg)
}

fn solver_options(a: &SolverArgs) -> Result<SolverOptions> {
    let mut opts = SolverOptions {
        certify: false,
        ..SolverOptions::default()
    };
    if let Some(v) = a.feas_tol {
        opts.feas_tol = v;
    }
    if let Some(v) = a.stat_tol {
        opts.stat_tol = v;
    }
    if a.h_max.is_some() {
        opts.h_max = a.h_max;
    }
    opts.validate()?;
    Ok(opts)
}

fn output_dir(out: &Option<PathBuf>, default_name: &str) -> PathBuf {
    match (out, std::env::var_os(OUT_ENV)) {
        (Some(p), _) => p.clone(),
        (None, Some(root)) => PathBuf::from(root).join(default_name),
        (None, None) => PathBuf::from("sampled-ocp-out").join(default_name),
    }
}

/// Parse a sampling-times file; `#` starts a comment.
pub fn read_times_file(path: &Path) -> Result<Vec<f64>> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut times = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("");
        for tok in body.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()) {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(&name, format!("line {}: `{tok}` is not a number", k + 1)))?;
            times.push(v);
        }
    }
    Ok(times)
}

fn run_solve(a: SolveArgs) -> i32 {
    let setup = || -> Result<(OcpProblem, Partition, SolverOptions)> {
        let prob = load_problem(&a.problem)?;
        let partition = match (a.n, &a.times_file) {
            (Some(n), None) => Partition::uniform(n, prob.horizon())?,
            (None, Some(path)) => {
                let part = Partition::new(read_times_file(path)?)?;
                if (part.horizon() - prob.horizon()).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "sampling times end at {} but the horizon is {}",
                        part.horizon(),
                        prob.horizon()
                    )));
                }
                part
            }
            _ => return Err(Error::InvalidInput("one of --N or --times-file is required".into())),
        };
        Ok((prob, partition, solver_options(&a.solver)?))
    };
    let (prob, partition, opts) = match setup() {
        Ok(v) => v,
        Err(e) => return fail(EXIT_USAGE, &e),
    };
    let sol = match solve(&prob, &partition, &opts, None) {
        Ok(s) => s,
        Err(e) => return fail(code_for(&e), &e),
    };
    let check = CheckOptions {
        require_hm: a.require_hm,
        ..CheckOptions::default()
    };
    let certified = sol.extremal().and_then(|e| certify(&e, &check).map(|r| (e, r)));
    let (extremal, report) = match certified {
        Ok(v) => v,
        Err(e) => return fail(EXIT_CERTIFICATION, &e),
    };
    let summary = SolveSummary {
        cost: sol.cost,
        feasibility: sol.diagnostics.feasibility,
        stationarity: sol.diagnostics.stationarity,
        outer_iterations: sol.diagnostics.outer_iterations,
        inner_iterations: sol.diagnostics.inner_iterations,
        multiplier: sol.multiplier.iter().copied().collect(),
    };
    let dir = output_dir(&a.out, &format!("solve-{}-N{}", prob.name(), partition.intervals()));
    if let Err(e) = write_bundle(&dir, &extremal, Some(summary), Some(&report)) {
        return fail(EXIT_USAGE, &e);
    }
    println!("bundle: {}", dir.display());
    println!("cost = {:.16e}", sol.cost);
    println!(
        "feasibility = {:.3e}, stationarity = {:.3e}",
        sol.diagnostics.feasibility, sol.diagnostics.stationarity
    );
    print!("{}", report.to_toml_string());
    if report.all_pass() {
        EXIT_OK
    } else {
        eprintln!("certification failed");
        EXIT_CERTIFICATION
    }
}

fn run_check(a: CheckArgs) -> i32 {
    let (_, extremal) = match read_bundle(&a.bundle) {
        Ok(v) => v,
        Err(e @ (Error::Precondition(_) | Error::TrivialPair)) => return fail(EXIT_CERTIFICATION, &e),
        Err(e) => return fail(EXIT_USAGE, &e),
    };
    let opts = CheckOptions {
        require_hm: a.require_hm,
        ..CheckOptions::default()
    };
    let report = match certify(&extremal, &opts) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_CERTIFICATION, &e),
    };
    let text = report.to_toml_string();
    print!("{text}");
    if let Some(out) = &a.out {
        let written = std::fs::create_dir_all(out).and_then(|_| std::fs::write(out.join("residuals.toml"), &text));
        if let Err(e) = written {
            return fail(EXIT_USAGE, &e.into());
        }
    }
    if report.all_pass() {
        EXIT_OK
    } else {
        eprintln!("certification failed");
        EXIT_CERTIFICATION
    }
}

fn run_converge(a: ConvergeArgs) -> i32 {
    let setup = || -> Result<SweepConfig> {
        let prob = load_problem(&a.problem)?;
        let mut cfg = SweepConfig::new(prob);
        if let Some(ns) = &a.ns {
            cfg.ns = ns.clone();
        }
        cfg.jobs = a.jobs;
        cfg.warm_start = match a.warm_start {
            WarmStartArg::Cold => WarmStart::Cold,
            WarmStartArg::Cascade => WarmStart::Cascade,
        };
        if let Some(n_ref) = a.n_ref {
            cfg.reference = ReferenceSource::FineSurrogate {
                n_ref,
                tolerance_factor: a.surrogate_factor,
            };
        }
        cfg.solver = solver_options(&a.solver)?;
        cfg.validate()?;
        Ok(cfg)
    };
    let cfg = match setup() {
        Ok(c) => c,
        Err(e) => return fail(EXIT_USAGE, &e),
    };
    let report = match sweep(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(code_for(&e), &e),
    };
    let dir = output_dir(&a.out, &format!("converge-{}", cfg.problem.name()));
    let summary = report.summary_toml();
    let written = std::fs::create_dir_all(&dir)
        .map_err(Error::from)
        .and_then(|_| report.write_csv(&dir.join("convergence.csv")))
        .and_then(|_| std::fs::write(dir.join("convergence_summary.toml"), &summary).map_err(Error::from));
    if let Err(e) = written {
        return fail(EXIT_USAGE, &e);
    }
    println!("report: {}", dir.display());
    print!("{}", report.csv_string());
    for c in &report.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let rate = |r: Option<f64>| r.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    println!(
        "rates: cost_err {}, state_sup_err {}, costate_sup_err {}",
        rate(report.rates.cost_err),
        rate(report.rates.state_sup_err),
        rate(report.rates.costate_sup_err)
    );
    if report.all_pass() {
        EXIT_OK
    } else {
        EXIT_CERTIFICATION
    }
}

fn run_catalog() -> i32 {
    for entry in catalog() {
        println!("{}", entry.name);
        println!("  reference: {}", entry.reference_kind.as_str());
        println!("  {}", entry.description);
        if !entry.params.is_empty() {
            println!("  params: {}", entry.params.join(", "));
        }
    }
    EXIT_OK
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn times_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        std::fs::write(&path, "# sampling\n0, 0.25\n0.5 1.0\n").unwrap();
        assert_eq!(read_times_file(&path).unwrap(), vec![0.0, 0.25, 0.5, 1.0]);
        std::fs::write(&path, "0\n0.5x\n").unwrap();
        let err = read_times_file(&path).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run(["sampled-ocp"]), EXIT_USAGE);
        assert_eq!(run(["sampled-ocp", "solve", "--problem", "lq_double_integrator"]), EXIT_USAGE);
        assert_eq!(run(["sampled-ocp", "converge", "--problem", "nope"]), EXIT_USAGE);
        assert_eq!(
            run(["sampled-ocp", "converge", "--problem", "lq_double_integrator", "--Ns", "4,2"]),
            EXIT_USAGE
        );
        assert_eq!(run(["sampled-ocp", "catalog"]), EXIT_OK);
    }
}
