//! C ABI over `sampled_ocp`.
//!
//! Objects are opaque handles released with the matching `*_free`. Every
//! fallible call returns a [`SocStatus`]; on failure the message is available
//! from [`soc_last_error_message`] on the same thread. Panics never cross the
//! boundary and are reported as `SOC_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sampled_ocp::partition::Partition;
use sampled_ocp::pmp::{certify, CheckOptions, ResidualReport};
use sampled_ocp::problem::{build, OcpProblem, ProblemConfig};
use sampled_ocp::solver::{solve, SampledSolution, SolverOptions};
use sampled_ocp::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SocStatus {
    Ok = 0,
    InvalidArgument = 1,
    Parse = 2,
    Solver = 3,
    Certification = 4,
    Reference = 5,
    Internal = 6,
}

/// Problem instance.
pub struct SocProblem(OcpProblem);
/// Solution of a sampled problem.
pub struct SocSolution(SampledSolution);
/// Residual report of a certification.
pub struct SocReport(ResidualReport);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn status_of(e: &Error) -> SocStatus {
    match e {
        Error::InvalidInput(_) | Error::UnknownProblem(_) | Error::MisalignedGrid(_) => SocStatus::InvalidArgument,
        Error::Parse { .. } | Error::Io(_) => SocStatus::Parse,
        Error::ReferenceRejected { .. } => SocStatus::Reference,
        _ => SocStatus::Solver,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SocStatus, String)>) -> SocStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SocStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SocStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (SocStatus, String) {
    (status_of(&e), e.to_string())
}

fn bad(msg: &str) -> (SocStatus, String) {
    (SocStatus::InvalidArgument, msg.to_string())
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, (SocStatus, String)> {
    if s.is_null() {
        return Err(bad(&format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| bad(&format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(h: *const T, what: &str) -> Result<&'a T, (SocStatus, String)> {
    h.as_ref().ok_or_else(|| bad(&format!("{what} handle is null")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), (SocStatus, String)> {
    if out.is_null() {
        return Err(bad("output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), (SocStatus, String)> {
    if out.is_null() {
        return Err(bad("output pointer is null"));
    }
    *out = value;
    Ok(())
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn soc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn soc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build a catalog problem with default parameters.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soc_problem_from_catalog(name: *const c_char, out: *mut *mut SocProblem) -> SocStatus {
    guard(|| {
        let name = text(name, "name")?;
        let prob = build(&ProblemConfig::named(name)).map_err(lib_err)?;
        store(out, SocProblem(prob))
    })
}

/// Build a problem from configuration text (TOML).
///
/// # Safety
/// `config` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soc_problem_from_config(config: *const c_char, out: *mut *mut SocProblem) -> SocStatus {
    guard(|| {
        let cfg = ProblemConfig::from_toml_str(text(config, "config")?, "<config>").map_err(lib_err)?;
        let prob = build(&cfg).map_err(lib_err)?;
        store(out, SocProblem(prob))
    })
}

/// # Safety
/// `problem` must come from a `soc_problem_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn soc_problem_free(problem: *mut SocProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Writes state dimension, control dimension and horizon.
///
/// # Safety
/// `problem` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn soc_problem_dims(problem: *const SocProblem, n: *mut usize, m: *mut usize, horizon: *mut f64) -> SocStatus {
    guard(|| {
        let p = &handle(problem, "problem")?.0;
        write_out(n, p.state_dim())?;
        write_out(m, p.control_dim())?;
        write_out(horizon, p.horizon())
    })
}

/// Solve on `intervals` uniform sampling intervals. Nonpositive tolerances
/// select the defaults.
///
/// # Safety
/// `problem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soc_solve_uniform(
    problem: *const SocProblem,
    intervals: usize,
    feas_tol: f64,
    stat_tol: f64,
    out: *mut *mut SocSolution,
) -> SocStatus {
    guard(|| {
        let p = &handle(problem, "problem")?.0;
        let mut opts = SolverOptions {
            certify: false,
            ..SolverOptions::default()
        };
        if feas_tol > 0.0 {
            opts.feas_tol = feas_tol;
        }
        if stat_tol > 0.0 {
            opts.stat_tol = stat_tol;
        }
        let part = Partition::uniform(intervals, p.horizon()).map_err(lib_err)?;
        let sol = solve(p, &part, &opts, None).map_err(lib_err)?;
        store(out, SocSolution(sol))
    })
}

/// # Safety
/// `solution` must come from `soc_solve_uniform` or be null.
#[no_mangle]
pub unsafe extern "C" fn soc_solution_free(solution: *mut SocSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Writes cost and terminal-constraint violation.
///
/// # Safety
/// `solution` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn soc_solution_cost(solution: *const SocSolution, cost: *mut f64, feasibility: *mut f64) -> SocStatus {
    guard(|| {
        let s = &handle(solution, "solution")?.0;
        write_out(cost, s.cost)?;
        write_out(feasibility, s.diagnostics.feasibility)
    })
}

/// Copies control values, interval-major (`intervals * m` entries). With a
/// null `buffer` only the required length is written to `len`.
///
/// # Safety
/// `buffer` must hold `*len` doubles or be null; `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soc_solution_control(solution: *const SocSolution, buffer: *mut f64, len: *mut usize) -> SocStatus {
    guard(|| {
        let s = &handle(solution, "solution")?.0;
        let values: Vec<f64> = s.control.values().iter().flat_map(|v| v.iter().copied()).collect();
        if len.is_null() {
            return Err(bad("len is null"));
        }
        if buffer.is_null() {
            *len = values.len();
            return Ok(());
        }
        if *len < values.len() {
            let need = values.len();
            *len = need;
            return Err(bad(&format!("buffer holds fewer than {need} values")));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), buffer, values.len());
        *len = values.len();
        Ok(())
    })
}

/// Certify the solution's lift.
///
/// # Safety
/// `solution` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soc_solution_certify(solution: *const SocSolution, require_hm: bool, out: *mut *mut SocReport) -> SocStatus {
    guard(|| {
        let s = &handle(solution, "solution")?.0;
        let e = s.extremal().map_err(lib_err)?;
        let opts = CheckOptions {
            require_hm,
            ..CheckOptions::default()
        };
        let report = certify(&e, &opts).map_err(|e| (SocStatus::Certification, e.to_string()))?;
        store(out, SocReport(report))
    })
}

/// # Safety
/// `report` must come from `soc_solution_certify` or be null.
#[no_mangle]
pub unsafe extern "C" fn soc_report_free(report: *mut SocReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Writes whether every required section passed, and the adjoint and
/// averaged-gradient residuals (the latter 0 when absent).
///
/// # Safety
/// `report` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn soc_report_summary(report: *const SocReport, all_pass: *mut bool, ae: *mut f64, ahg: *mut f64) -> SocStatus {
    guard(|| {
        let r = &handle(report, "report")?.0;
        write_out(all_pass, r.all_pass())?;
        write_out(ae, r.ae.residual)?;
        write_out(ahg, r.ahg.as_ref().map_or(0.0, |a| a.sup))
    })
}

/// Report as TOML text; release with `soc_string_free`.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn soc_report_toml(report: *const SocReport, out: *mut *mut c_char) -> SocStatus {
    guard(|| {
        let r = &handle(report, "report")?.0;
        let s = CString::new(r.to_toml_string()).map_err(|_| bad("report contains NUL"))?;
        write_out(out, s.into_raw())
    })
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn soc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
