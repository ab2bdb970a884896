//! C interface to the `msb` library.
//!
//! Handles are opaque and owned by the caller once returned: release them
//! with the matching `*_free`. Every fallible call returns an [`MsbStatus`];
//! on failure [`msb_last_error_message`] describes the error on the calling
//! thread. Strings returned through `char **` out-parameters must be released
//! with [`msb_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use msb::exact::{exact_mot, LpStatus};
use msb::solver::{sinkhorn_solve_with, SolverOptions};
use msb::{compute_barycenter, wasserstein_p, DiscreteMeasure, MsbError, Problem, Solution};

/// Status codes. The nonzero library codes equal the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsbStatus {
    Ok = 0,
    Validation = 2,
    NotConverged = 3,
    Capacity = 4,
    NullPointer = 5,
    InvalidUtf8 = 6,
    Panic = 7,
}

/// Opaque problem handle.
pub struct MsbProblem(Problem);

/// Opaque solution handle.
pub struct MsbSolution(Solution);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &MsbError) -> MsbStatus {
    match err.exit_code() {
        3 => MsbStatus::NotConverged,
        4 => MsbStatus::Capacity,
        _ => MsbStatus::Validation,
    }
}

fn fail(status: MsbStatus, msg: &str) -> MsbStatus {
    set_last_error(msg);
    status
}

fn guard<F: FnOnce() -> MsbStatus>(f: F) -> MsbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(MsbStatus::Panic, "internal panic"),
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(MsbStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

fn into_c_string(s: String, out: *mut *mut c_char) -> MsbStatus {
    match CString::new(s) {
        Ok(c) => {
            // SAFETY: `out` was checked non-null by the caller.
            unsafe { *out = c.into_raw() };
            MsbStatus::Ok
        }
        Err(_) => fail(MsbStatus::InvalidUtf8, "output contains a NUL byte"),
    }
}

/// Builds a measure from `n` row-major points of dimension `dim`.
///
/// # Safety
/// `points` must hold `n * dim` values and `weights` `n` values.
unsafe fn measure_from_raw(n: usize, dim: usize, points: *const f64, weights: *const f64) -> msb::Result<DiscreteMeasure> {
    let xs = slice::from_raw_parts(points, n * dim);
    let ws = slice::from_raw_parts(weights, n);
    DiscreteMeasure::new(xs.chunks(dim.max(1)).map(<[f64]>::to_vec).collect(), ws.to_vec())
}

/// Message of the last failed call on this thread. The pointer stays valid
/// until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn msb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a problem with `m` marginals in dimension `dim`. Marginal `j` has
/// `sizes[j]` atoms; `points` concatenates all atoms row-major, marginal by
/// marginal, and `weights` all weights in the same order.
///
/// # Safety
/// `sizes` and `alpha` must hold `m` values, `weights` `Σ sizes` values and
/// `points` `dim · Σ sizes` values. `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msb_problem_new(
    m: usize,
    dim: usize,
    sizes: *const usize,
    points: *const f64,
    weights: *const f64,
    alpha: *const f64,
    epsilon: f64,
    out: *mut *mut MsbProblem,
) -> MsbStatus {
    guard(|| {
        non_null!(sizes, points, weights, alpha, out);
        if m == 0 || dim == 0 {
            return fail(MsbStatus::Validation, "m and dim must be >= 1");
        }
        let sizes = slice::from_raw_parts(sizes, m);
        let mut marginals = Vec::with_capacity(m);
        let mut offset = 0;
        for &n in sizes {
            match measure_from_raw(n, dim, points.add(offset * dim), weights.add(offset)) {
                Ok(mu) => marginals.push(mu),
                Err(e) => return fail(status_of(&e), &e.to_string()),
            }
            offset += n;
        }
        let alpha = slice::from_raw_parts(alpha, m).to_vec();
        match Problem::new(marginals, alpha, epsilon) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(MsbProblem(p)));
                MsbStatus::Ok
            }
            Err(e) => fail(status_of(&e), &e.to_string()),
        }
    })
}

/// Parses a problem from its JSON form (`marginals`, `alpha`, `epsilon`).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msb_problem_from_json(json: *const c_char, out: *mut *mut MsbProblem) -> MsbStatus {
    guard(|| {
        non_null!(json, out);
        let Ok(text) = CStr::from_ptr(json).to_str() else {
            return fail(MsbStatus::InvalidUtf8, "json is not valid UTF-8");
        };
        match serde_json::from_str::<Problem>(text) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(MsbProblem(p)));
                MsbStatus::Ok
            }
            Err(e) => fail(MsbStatus::Validation, &e.to_string()),
        }
    })
}

/// # Safety
/// `problem` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn msb_problem_free(problem: *mut MsbProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Number of marginals, 0 for a null handle.
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msb_problem_m(problem: *const MsbProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.0.m())
}

/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msb_problem_dim(problem: *const MsbProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.0.dim())
}

/// Runs the Sinkhorn solver. On budget exhaustion the solution is still
/// returned through `out` together with `MsbStatus::NotConverged`.
///
/// # Safety
/// `problem` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msb_solve(
    problem: *const MsbProblem,
    tol: f64,
    max_sweeps: usize,
    out: *mut *mut MsbSolution,
) -> MsbStatus {
    guard(|| {
        non_null!(problem, out);
        let opts = SolverOptions::new(tol, max_sweeps);
        match sinkhorn_solve_with(&(*problem).0, &opts, None) {
            Ok(sol) => {
                let converged = sol.converged;
                let msg = format!("residual {:e} after {} sweeps", sol.marginal_residual, sol.iterations);
                *out = Box::into_raw(Box::new(MsbSolution(sol)));
                if converged {
                    MsbStatus::Ok
                } else {
                    fail(MsbStatus::NotConverged, &msg)
                }
            }
            Err(e) => fail(status_of(&e), &e.to_string()),
        }
    })
}

/// # Safety
/// `solution` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn msb_solution_free(solution: *mut MsbSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msb_solution_converged(solution: *const MsbSolution) -> bool {
    solution.as_ref().is_some_and(|s| s.0.converged)
}

/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msb_solution_iterations(solution: *const MsbSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.0.iterations)
}

/// Dual objective at the returned potentials; NaN for a null handle.
///
/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msb_solution_dual_value(solution: *const MsbSolution) -> f64 {
    solution.as_ref().map_or(f64::NAN, |s| s.0.dual_value)
}

/// `⟨c, π⟩ + ε KL(π ‖ ⊗ν)`; NaN for a null handle.
///
/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msb_solution_primal_value(solution: *const MsbSolution) -> f64 {
    solution.as_ref().map_or(f64::NAN, |s| s.0.primal_value)
}

/// Copies potential `j` into `buf` (length `len`, the marginal's atom
/// count), NaN at zero-weight atoms.
///
/// # Safety
/// `solution` must be a live handle and `buf` hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn msb_solution_potential(
    solution: *const MsbSolution,
    j: usize,
    buf: *mut f64,
    len: usize,
) -> MsbStatus {
    guard(|| {
        non_null!(solution, buf);
        let sol = &(*solution).0;
        if j >= sol.problem().m() {
            return fail(MsbStatus::Validation, &format!("marginal {j} out of range"));
        }
        let n = sol.original_sizes()[j];
        if len < n {
            return fail(MsbStatus::Validation, &format!("buffer of length {len} too small"));
        }
        let out = slice::from_raw_parts_mut(buf, n);
        for (i, v) in out.iter_mut().enumerate() {
            *v = sol.potential_at(j, i).unwrap_or(f64::NAN);
        }
        MsbStatus::Ok
    })
}

/// Solution as JSON.
///
/// # Safety
/// `solution` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msb_solution_to_json(solution: *const MsbSolution, out: *mut *mut c_char) -> MsbStatus {
    guard(|| {
        non_null!(solution, out);
        match (*solution).0.to_json() {
            Ok(s) => into_c_string(s, out),
            Err(e) => fail(status_of(&e), &e.to_string()),
        }
    })
}

/// Barycenter of a converged solution as JSON.
///
/// # Safety
/// `solution` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msb_barycenter_to_json(
    solution: *const MsbSolution,
    consolidate: bool,
    out: *mut *mut c_char,
) -> MsbStatus {
    guard(|| {
        non_null!(solution, out);
        match compute_barycenter(&(*solution).0, consolidate).and_then(|b| b.to_json()) {
            Ok(s) => into_c_string(s, out),
            Err(e) => fail(status_of(&e), &e.to_string()),
        }
    })
}

/// Optimal value of the unregularized multimarginal LP.
///
/// # Safety
/// `problem` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msb_exact_value(problem: *const MsbProblem, out: *mut f64) -> MsbStatus {
    guard(|| {
        non_null!(problem, out);
        match exact_mot(&(*problem).0) {
            Ok(r) if r.status == LpStatus::Optimal => {
                *out = r.value;
                MsbStatus::Ok
            }
            Ok(_) => fail(MsbStatus::Validation, "multimarginal LP is infeasible"),
            Err(e) => fail(status_of(&e), &e.to_string()),
        }
    })
}

/// `W_p(μ, ν)` for `p ∈ {1, 2}` between two measures in dimension `dim`.
///
/// # Safety
/// Point arrays must hold `n · dim` values, weight arrays `n` values, and
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msb_wasserstein(
    dim: usize,
    n_mu: usize,
    points_mu: *const f64,
    weights_mu: *const f64,
    n_nu: usize,
    points_nu: *const f64,
    weights_nu: *const f64,
    p: u32,
    out: *mut f64,
) -> MsbStatus {
    guard(|| {
        non_null!(points_mu, weights_mu, points_nu, weights_nu, out);
        let result = measure_from_raw(n_mu, dim, points_mu, weights_mu).and_then(|mu| {
            let nu = measure_from_raw(n_nu, dim, points_nu, weights_nu)?;
            wasserstein_p(&mu, &nu, p)
        });
        match result {
            Ok(w) => {
                *out = w;
                MsbStatus::Ok
            }
            Err(e) => fail(status_of(&e), &e.to_string()),
        }
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn msb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn msb_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains NUL"),
    };
    VERSION.as_ptr()
}
