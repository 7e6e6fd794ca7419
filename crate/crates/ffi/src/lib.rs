//! C ABI over the `pnpbo` library.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Every fallible call returns a
//! [`PnpboStatus`]; on failure the message is kept per thread and can be
//! copied out with [`pnpbo_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pnpbo::harness::config::{parse_toml, resolve, AnyProblem, ProblemConfig, RunConfig};
use pnpbo::model::{BilevelProblem, Iterate};
use pnpbo::oracle::{self, OracleConfig};
use pnpbo::solver::{Preset, SolverConfig, SolverState};
use pnpbo::theory::{self, build_ledger, SmoothnessParams, Steps};
use pnpbo::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnpboStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Diverged = 5,
    Infeasible = 6,
    NoConvergence = 7,
    State = 8,
    BufferSize = 9,
    Panic = 10,
}

impl From<&Error> for PnpboStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) => PnpboStatus::InvalidArgument,
            Error::State(_) => PnpboStatus::State,
            Error::Diverged { .. } => PnpboStatus::Diverged,
            Error::NoConvergence { .. } => PnpboStatus::NoConvergence,
            Error::Parse { .. } => PnpboStatus::Parse,
            Error::Infeasible(_) => PnpboStatus::Infeasible,
            Error::Io(_) => PnpboStatus::Io,
        }
    }
}

/// A constructed bilevel problem.
pub struct PnpboProblem {
    inner: AnyProblem,
}

/// A running solver; stepped against the problem it was created for.
pub struct PnpboSolver {
    state: SolverState,
    dims: PnpboDims,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PnpboDims {
    pub n: usize,
    pub m: usize,
    pub dim_x: usize,
    pub dim_y: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PnpboSmoothness {
    pub lf: f64,
    pub lg1: f64,
    pub lg2: f64,
    pub mu: f64,
    pub cf: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PnpboSteps {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Solver settings. Fill with [`pnpbo_solver_options_default`] first.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PnpboSolverOptions {
    pub steps: PnpboSteps,
    /// Moving-average weight, used by the MA presets only.
    pub rho: f64,
    /// Clipping radius of the implicit variable.
    pub radius: f64,
    pub batch_f: usize,
    pub batch_g: usize,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(e: Error) -> PnpboStatus {
    let status = PnpboStatus::from(&e);
    set_error(e.to_string());
    status
}

fn null(what: &str) -> PnpboStatus {
    set_error(format!("null pointer: {what}"));
    PnpboStatus::NullPointer
}

fn guard(f: impl FnOnce() -> PnpboStatus) -> PnpboStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PnpboStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, PnpboStatus> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        PnpboStatus::InvalidArgument
    })
}

unsafe fn read_slice<'a>(p: *const f64, len: usize, want: usize, what: &str) -> Result<&'a [f64], PnpboStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    if len != want {
        set_error(format!("{what} has length {len}, expected {want}"));
        return Err(PnpboStatus::BufferSize);
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_slice(src: &[f64], dst: *mut f64, len: usize, what: &str) -> PnpboStatus {
    if dst.is_null() {
        return null(what);
    }
    if len != src.len() {
        set_error(format!("{what} has length {len}, expected {}", src.len()));
        return PnpboStatus::BufferSize;
    }
    std::slice::from_raw_parts_mut(dst, len).copy_from_slice(src);
    PnpboStatus::Ok
}

fn dims_of(p: &dyn BilevelProblem) -> PnpboDims {
    PnpboDims {
        n: p.n(),
        m: p.m(),
        dim_x: p.dim_x(),
        dim_y: p.dim_y(),
    }
}

fn preset_of(name: &str) -> Result<Preset, PnpboStatus> {
    name.parse::<Preset>().map_err(fail)
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pnpbo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// plus one, so a second call with that size gets the whole text.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pnpbo_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len() + 1
    })
}

/// Builds a problem from a TOML table such as
/// `kind = "quadratic"` followed by its fields. `data_root` may be null.
///
/// # Safety
/// `toml` must be a NUL-terminated string, `data_root` null or one, and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pnpbo_problem_from_toml(
    toml: *const c_char,
    data_root: *const c_char,
    out: *mut *mut PnpboProblem,
) -> PnpboStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let text = try_status!(read_str(toml, "toml"));
        let root = if data_root.is_null() {
            None
        } else {
            Some(std::path::PathBuf::from(try_status!(read_str(data_root, "data_root"))))
        };
        let cfg: ProblemConfig = try_status!(parse_toml(text).map_err(fail));
        let inner = try_status!(AnyProblem::build(&cfg, root.as_deref()).map_err(fail));
        *out = Box::into_raw(Box::new(PnpboProblem { inner }));
        PnpboStatus::Ok
    })
}

/// Builds both the problem and a ready solver from a full run configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `problem_out` and `solver_out`
/// valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pnpbo_run_from_toml(
    toml: *const c_char,
    problem_out: *mut *mut PnpboProblem,
    solver_out: *mut *mut PnpboSolver,
) -> PnpboStatus {
    guard(|| {
        if problem_out.is_null() || solver_out.is_null() {
            return null("output handle");
        }
        let text = try_status!(read_str(toml, "toml"));
        let cfg = try_status!(RunConfig::parse(text).map_err(fail));
        let resolved = try_status!(resolve(&cfg).map_err(fail));
        let it0 = resolved.initial_iterate();
        let dims = dims_of(resolved.problem.as_dyn());
        let state = try_status!(SolverState::new(resolved.problem.as_dyn(), resolved.solver, it0).map_err(fail));
        *problem_out = Box::into_raw(Box::new(PnpboProblem {
            inner: resolved.problem,
        }));
        *solver_out = Box::into_raw(Box::new(PnpboSolver { state, dims }));
        PnpboStatus::Ok
    })
}

/// # Safety
/// `problem` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pnpbo_problem_free(problem: *mut PnpboProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// # Safety
/// `problem` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pnpbo_problem_dims(problem: *const PnpboProblem, out: *mut PnpboDims) -> PnpboStatus {
    guard(|| {
        let (Some(p), false) = (problem.as_ref(), out.is_null()) else {
            return null("problem or out");
        };
        *out = dims_of(p.inner.as_dyn());
        PnpboStatus::Ok
    })
}

/// Exact hypergradient at `x` and its squared norm (`grad_sq` may be null).
///
/// # Safety
/// `x` must hold `len_x` values, `grad` room for `len_grad`; both lengths
/// must equal the problem's `dim_x`.
#[no_mangle]
pub unsafe extern "C" fn pnpbo_hypergradient(
    problem: *const PnpboProblem,
    x: *const f64,
    len_x: usize,
    grad: *mut f64,
    len_grad: usize,
    grad_sq: *mut f64,
) -> PnpboStatus {
    guard(|| {
        let Some(p) = problem.as_ref() else {
            return null("problem");
        };
        let p = p.inner.as_dyn();
        let x = try_status!(read_slice(x, len_x, p.dim_x(), "x"));
        let g = try_status!(oracle::hypergradient(p, x, &OracleConfig::default()).map_err(fail));
        let status = write_slice(&g, grad, len_grad, "grad");
        if status == PnpboStatus::Ok && !grad_sq.is_null() {
            *grad_sq = g.iter().map(|v| v * v).sum();
        }
        status
    })
}

/// Preset defaults for `problem` with zero step sizes.
///
/// # Safety
/// `preset` must be a NUL-terminated name, `problem` a live handle and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pnpbo_solver_options_default(
    problem: *const PnpboProblem,
    preset: *const c_char,
    out: *mut PnpboSolverOptions,
) -> PnpboStatus {
    guard(|| {
        let (Some(p), false) = (problem.as_ref(), out.is_null()) else {
            return null("problem or out");
        };
        let preset = try_status!(preset_of(try_status!(read_str(preset, "preset"))));
        let d = dims_of(p.inner.as_dyn());
        let c = SolverConfig::from_preset(preset, d.n, d.m);
        *out = PnpboSolverOptions {
            steps: PnpboSteps::default(),
            rho: c.rho,
            radius: c.radius,
            batch_f: c.batch_f,
            batch_g: c.batch_g,
            seed: c.seed,
        };
        PnpboStatus::Ok
    })
}

/// Starts a solver at the zero iterate.
///
/// # Safety
/// `problem` must be a live handle, `preset` a NUL-terminated name,
/// `options` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pnpbo_solver_new(
    problem: *const PnpboProblem,
    preset: *const c_char,
    options: *const PnpboSolverOptions,
    out: *mut *mut PnpboSolver,
) -> PnpboStatus {
    guard(|| {
        let (Some(p), Some(o), false) = (problem.as_ref(), options.as_ref(), out.is_null()) else {
            return null("problem, options or out");
        };
        let preset = try_status!(preset_of(try_status!(read_str(preset, "preset"))));
        let p = p.inner.as_dyn();
        let mut cfg = SolverConfig::from_preset(preset, p.n(), p.m()).with_steps(
            o.steps.alpha,
            o.steps.beta,
            o.steps.gamma,
        );
        cfg.rho = o.rho;
        cfg.radius = o.radius;
        cfg.batch_f = o.batch_f;
        cfg.batch_g = o.batch_g;
        cfg.seed = o.seed;
        let state = try_status!(SolverState::new(p, cfg, Iterate::zeros(p)).map_err(fail));
        *out = Box::into_raw(Box::new(PnpboSolver { state, dims: dims_of(p) }));
        PnpboStatus::Ok
    })
}

/// # Safety
/// `solver` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pnpbo_solver_free(solver: *mut PnpboSolver) {
    if !solver.is_null() {
        drop(Box::from_raw(solver));
    }
}

/// Advances `steps` iterations. On divergence the iterate stays at the
/// last finite value and `PNPBO_STATUS_DIVERGED` is returned.
///
/// # Safety
/// Both handles must be live; `problem` must have the dimensions the
/// solver was created with.
#[no_mangle]
pub unsafe extern "C" fn pnpbo_solver_step(
    solver: *mut PnpboSolver,
    problem: *const PnpboProblem,
    steps: u64,
) -> PnpboStatus {
    guard(|| {
        let (Some(s), Some(p)) = (solver.as_mut(), problem.as_ref()) else {
            return null("solver or problem");
        };
        let p = p.inner.as_dyn();
        if dims_of(p) != s.dims {
            set_error("problem dimensions differ from the solver's".into());
            return PnpboStatus::InvalidArgument;
        }
        for _ in 0..steps {
            if let Err(e) = s.state.step(p) {
                return fail(e);
            }
        }
        PnpboStatus::Ok
    })
}

/// Number of completed iterations, or 0 for a null handle.
///
/// # Safety
/// `solver` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pnpbo_solver_iteration(solver: *const PnpboSolver) -> u64 {
    solver.as_ref().map_or(0, |s| s.state.k as u64)
}

/// Copies the current iterate out; buffer lengths must match exactly.
///
/// # Safety
/// Each pointer must hold room for its stated length.
#[no_mangle]
pub unsafe extern "C" fn pnpbo_solver_iterate(
    solver: *const PnpboSolver,
    x: *mut f64,
    len_x: usize,
    y: *mut f64,
    len_y: usize,
    z: *mut f64,
    len_z: usize,
) -> PnpboStatus {
    guard(|| {
        let Some(s) = solver.as_ref() else {
            return null("solver");
        };
        let it = &s.state.iterate;
        for (src, dst, len, what) in [(&it.x, x, len_x, "x"), (&it.y, y, len_y, "y"), (&it.z, z, len_z, "z")] {
            let st = write_slice(src, dst, len, what);
            if st != PnpboStatus::Ok {
                return st;
            }
        }
        PnpboStatus::Ok
    })
}

/// Sample accesses so far, summed over channels.
///
/// # Safety
/// `solver` must be a live handle; `upper` and `lower` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pnpbo_solver_samples(
    solver: *const PnpboSolver,
    upper: *mut u64,
    lower: *mut u64,
) -> PnpboStatus {
    guard(|| {
        let (Some(s), false, false) = (solver.as_ref(), upper.is_null(), lower.is_null()) else {
            return null("solver, upper or lower");
        };
        (*upper, *lower) = s.state.samples();
        PnpboStatus::Ok
    })
}

fn params_of(p: &PnpboSmoothness) -> SmoothnessParams {
    SmoothnessParams {
        lf: p.lf,
        lg1: p.lg1,
        lg2: p.lg2,
        mu: p.mu,
        cf: p.cf,
    }
}

/// Largest certified constant step sizes for `preset`.
///
/// # Safety
/// `params` and `out` must be valid pointers, `preset` a NUL-terminated name.
#[no_mangle]
pub unsafe extern "C" fn pnpbo_suggest_steps(
    params: *const PnpboSmoothness,
    n: usize,
    m: usize,
    preset: *const c_char,
    out: *mut PnpboSteps,
) -> PnpboStatus {
    guard(|| {
        let (Some(params), false) = (params.as_ref(), out.is_null()) else {
            return null("params or out");
        };
        let preset = try_status!(preset_of(try_status!(read_str(preset, "preset"))));
        let ledger = try_status!(build_ledger(params_of(params), n, m).map_err(fail));
        let s = try_status!(theory::suggest_steps(&ledger, preset).map_err(fail));
        *out = PnpboSteps {
            alpha: s.steps.alpha,
            beta: s.steps.beta,
            gamma: s.steps.gamma,
        };
        PnpboStatus::Ok
    })
}

/// Checks `steps` against the conditions for `preset`; `feasible` gets 1 or 0.
///
/// # Safety
/// `params`, `steps` and `feasible` must be valid pointers, `preset` a
/// NUL-terminated name.
#[no_mangle]
pub unsafe extern "C" fn pnpbo_check_steps(
    params: *const PnpboSmoothness,
    n: usize,
    m: usize,
    preset: *const c_char,
    steps: *const PnpboSteps,
    feasible: *mut i32,
) -> PnpboStatus {
    guard(|| {
        let (Some(params), Some(steps), false) = (params.as_ref(), steps.as_ref(), feasible.is_null()) else {
            return null("params, steps or feasible");
        };
        let preset = try_status!(preset_of(try_status!(read_str(preset, "preset"))));
        let ledger = try_status!(build_ledger(params_of(params), n, m).map_err(fail));
        let (co, ..) = theory::coefficients_for(&ledger, preset);
        let cert = co.check(
            &ledger,
            Steps {
                alpha: steps.alpha,
                beta: steps.beta,
                gamma: steps.gamma,
            },
        );
        *feasible = i32::from(cert.feasible);
        PnpboStatus::Ok
    })
}
