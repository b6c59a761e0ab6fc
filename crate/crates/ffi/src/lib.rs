//! C ABI over the simulation, bound and experiment entry points.
//!
//! Every function returns an [`SfStatus`]; results go through out-pointers.
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free`. The text of the last failure on the calling thread is
//! available from [`sf_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use stein_fclt::cli::{self, CliError};
use stein_fclt::graph::{self, GraphSpec};
use stein_fclt::runs::{self, RunsSpec};
use stein_fclt::{rng_for, stable_hash, StepPath};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    /// A verify experiment ran and found a violated check.
    Violation = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Random-graph model handle.
pub struct SfGraph(GraphSpec);

/// Run-count model handle.
pub struct SfRuns(RunsSpec);

/// Step path handle: `(grid + 1) x dim` values, row-major.
pub struct SfPath(StepPath);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), (SfStatus, String)>) -> SfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SfStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            SfStatus::Panic
        }
    }
}

fn invalid(e: stein_fclt::Error) -> (SfStatus, String) {
    (SfStatus::InvalidArgument, e.to_string())
}

fn null(name: &str) -> (SfStatus, String) {
    (SfStatus::NullPointer, format!("{name} is null"))
}

unsafe fn put<T>(out: *mut *mut T, v: T) {
    *out = Box::into_raw(Box::new(v));
}

/// Message of the last failure on this thread; valid until the next call.
#[no_mangle]
pub extern "C" fn sf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_graph_new(n: usize, p: f64, out: *mut *mut SfGraph) -> SfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, SfGraph(GraphSpec::new(n, p).map_err(invalid)?));
        Ok(())
    })
}

/// # Safety
/// `g` must come from [`sf_graph_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn sf_graph_free(g: *mut SfGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Centered edge and two-star path from replication `rep` of `seed`.
///
/// # Safety
/// `g` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_graph_simulate(g: *const SfGraph, seed: u64, rep: u64, out: *mut *mut SfPath) -> SfStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("g"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut rng = rng_for(seed, stable_hash(b"ffi:graph"), rep);
        put(out, SfPath(graph::simulate_graph(&g.0, &mut rng)));
        Ok(())
    })
}

/// Pre-limit and limit bounds per unit norm.
///
/// # Safety
/// `pre` and `con` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sf_graph_bounds(n: usize, pre: *mut f64, con: *mut f64) -> SfStatus {
    guard(|| {
        if pre.is_null() || con.is_null() {
            return Err(null("output"));
        }
        let b = graph::graph_bounds(n).map_err(invalid)?;
        *pre = b.pre;
        *con = b.con;
        Ok(())
    })
}

/// # Safety
/// `rs` must point to `len` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sf_runs_new(n: usize, p: f64, rs: *const usize, len: usize, out: *mut *mut SfRuns) -> SfStatus {
    guard(|| {
        if rs.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let rs = std::slice::from_raw_parts(rs, len).to_vec();
        put(out, SfRuns(RunsSpec::new(n, p, rs).map_err(invalid)?));
        Ok(())
    })
}

/// # Safety
/// `r` must come from [`sf_runs_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn sf_runs_free(r: *mut SfRuns) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// # Safety
/// `r` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_runs_simulate(r: *const SfRuns, seed: u64, rep: u64, out: *mut *mut SfPath) -> SfStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("r"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut rng = rng_for(seed, stable_hash(b"ffi:runs"), rep);
        put(out, SfPath(runs::simulate_runs(&r.0, &mut rng)));
        Ok(())
    })
}

/// Totals of the pre-limit and limit bounds per unit `M^0` norm.
///
/// # Safety
/// `r` must be a live handle; `pre` and `con` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sf_runs_bounds(r: *const SfRuns, pre: *mut f64, con: *mut f64) -> SfStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("r"))?;
        if pre.is_null() || con.is_null() {
            return Err(null("output"));
        }
        *pre = runs::runs_bound_pre(&r.0).total;
        *con = runs::runs_bound_con(&r.0).total;
        Ok(())
    })
}

/// # Safety
/// `path` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_path_dim(path: *const SfPath) -> usize {
    path.as_ref().map_or(0, |p| p.0.dim())
}

/// # Safety
/// `path` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_path_grid(path: *const SfPath) -> usize {
    path.as_ref().map_or(0, |p| p.0.grid())
}

/// # Safety
/// `path` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_path_sup_norm(path: *const SfPath) -> f64 {
    path.as_ref().map_or(f64::NAN, |p| p.0.sup_norm())
}

/// Copy all `(grid + 1) * dim` values into `buf`.
///
/// # Safety
/// `path` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_path_values(path: *const SfPath, buf: *mut f64, len: usize) -> SfStatus {
    guard(|| {
        let p = path.as_ref().ok_or_else(|| null("path"))?;
        let v = p.0.values();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < v.len() {
            return Err((SfStatus::BufferTooSmall, format!("need {} values, got {len}", v.len())));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        Ok(())
    })
}

/// # Safety
/// `path` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn sf_path_free(path: *mut SfPath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// Run a JSON experiment config. On `SF_STATUS_OK` or `SF_STATUS_VIOLATION`
/// `*report` receives the JSON report without timing metadata; free it with
/// [`sf_string_free`]. `threads = 0` uses the default pool.
///
/// # Safety
/// `config` must be a NUL-terminated string; `report` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_run_config(config: *const c_char, threads: usize, report: *mut *mut c_char) -> SfStatus {
    let mut violation = false;
    let status = guard(|| {
        if config.is_null() || report.is_null() {
            return Err(null("argument"));
        }
        *report = ptr::null_mut();
        let text = CStr::from_ptr(config)
            .to_str()
            .map_err(|e| (SfStatus::InvalidArgument, format!("config is not UTF-8: {e}")))?;
        let map = |e: CliError| match e {
            CliError::Config(m) => (SfStatus::Config, m),
            CliError::Numerical(m) => (SfStatus::Numerical, m),
        };
        let cfg = cli::parse_config(text).map_err(map)?;
        let exec = cli::execute(&cfg, (threads > 0).then_some(threads), false).map_err(map)?;
        violation = exec.violation;
        let json = serde_json::to_string(&exec.report(&cfg)).map_err(|e| (SfStatus::Numerical, e.to_string()))?;
        *report = CString::new(json).map_err(|e| (SfStatus::Numerical, e.to_string()))?.into_raw();
        Ok(())
    });
    if status == SfStatus::Ok && violation {
        set_error("verification check violated");
        SfStatus::Violation
    } else {
        status
    }
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn sf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
