use std::ffi::{CStr, CString};
use std::ptr;

use msb_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(msb_last_error_message()) }.to_string_lossy().into_owned()
}

fn dirac_problem() -> *mut MsbProblem {
    let sizes = [1usize, 1];
    let points = [1.0, -1.0];
    let weights = [1.0, 1.0];
    let alpha = [0.5, 0.5];
    let mut p = ptr::null_mut();
    let s = unsafe {
        msb_problem_new(2, 1, sizes.as_ptr(), points.as_ptr(), weights.as_ptr(), alpha.as_ptr(), 0.5, &mut p)
    };
    assert_eq!(s, MsbStatus::Ok);
    p
}

#[test]
fn dirac_solve_roundtrip() {
    let p = dirac_problem();
    unsafe {
        assert_eq!(msb_problem_m(p), 2);
        assert_eq!(msb_problem_dim(p), 1);
        let mut sol = ptr::null_mut();
        assert_eq!(msb_solve(p, 1e-9, 100, &mut sol), MsbStatus::Ok);
        assert!(msb_solution_converged(sol));
        assert_eq!(msb_solution_iterations(sol), 1);
        assert!((msb_solution_primal_value(sol) - 1.0).abs() < 1e-12);
        assert!((msb_solution_dual_value(sol) - 0.5).abs() < 1e-12);

        let mut f = [f64::NAN; 1];
        assert_eq!(msb_solution_potential(sol, 1, f.as_mut_ptr(), 1), MsbStatus::Ok);
        assert!((f[0] - 1.0).abs() < 1e-12);
        assert_eq!(msb_solution_potential(sol, 2, f.as_mut_ptr(), 1), MsbStatus::Validation);

        let mut json = ptr::null_mut();
        assert_eq!(msb_barycenter_to_json(sol, true, &mut json), MsbStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        msb_string_free(json);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["points"][0][0].as_f64(), Some(0.0));

        let mut value = f64::NAN;
        assert_eq!(msb_exact_value(p, &mut value), MsbStatus::Ok);
        assert!((value - 1.0).abs() < 1e-12);

        msb_solution_free(sol);
        msb_problem_free(p);
    }
}

#[test]
fn json_problem_and_solution_json() {
    let json = CString::new(
        r#"{"marginals": [
            {"points": [[-0.5], [0.0], [0.5]], "weights": [0.5, 0.0, 0.5]},
            {"points": [[0.2], [0.4]], "weights": [0.3, 0.7]}
        ], "alpha": [0.5, 0.5], "epsilon": 1.0}"#,
    )
    .unwrap();
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(msb_problem_from_json(json.as_ptr(), &mut p), MsbStatus::Ok);
        let mut sol = ptr::null_mut();
        assert_eq!(msb_solve(p, 1e-10, 1000, &mut sol), MsbStatus::Ok);

        let mut f = [0.0; 3];
        assert_eq!(msb_solution_potential(sol, 0, f.as_mut_ptr(), 3), MsbStatus::Ok);
        assert!(f[0].is_finite() && f[1].is_nan() && f[2].is_finite());
        assert_eq!(msb_solution_potential(sol, 0, f.as_mut_ptr(), 2), MsbStatus::Validation);

        let mut out = ptr::null_mut();
        assert_eq!(msb_solution_to_json(sol, &mut out), MsbStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(out).to_str().unwrap()).unwrap();
        msb_string_free(out);
        assert!(v["potentials"][0][1].is_null());
        assert_eq!(v["converged"], true);

        msb_solution_free(sol);
        msb_problem_free(p);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut p = ptr::null_mut();
        let sizes = [2usize];
        let points = [0.0, 0.5];
        let weights = [0.4, 0.4];
        let alpha = [1.0];
        let s = msb_problem_new(1, 1, sizes.as_ptr(), points.as_ptr(), weights.as_ptr(), alpha.as_ptr(), 1.0, &mut p);
        assert_eq!(s, MsbStatus::Validation);
        assert!(p.is_null());
        assert!(last_error().contains("sum to 0.8"), "{}", last_error());

        assert_eq!(msb_problem_from_json(ptr::null(), &mut p), MsbStatus::NullPointer);
        assert!(last_error().contains("json"));

        let bad = CString::new("{\"alpha\": [1.0]}").unwrap();
        assert_eq!(msb_problem_from_json(bad.as_ptr(), &mut p), MsbStatus::Validation);

        assert_eq!(msb_problem_m(ptr::null()), 0);
        assert!(msb_solution_primal_value(ptr::null()).is_nan());
        msb_problem_free(ptr::null_mut());
        msb_solution_free(ptr::null_mut());
        msb_string_free(ptr::null_mut());
    }
}

#[test]
fn non_convergence_still_returns_solution() {
    let json = CString::new(
        r#"{"marginals": [
            {"points": [[-0.9], [0.1], [0.8]], "weights": [0.2, 0.5, 0.3]},
            {"points": [[-0.4], [0.3], [0.9]], "weights": [0.4, 0.35, 0.25]}
        ], "alpha": [0.5, 0.5], "epsilon": 0.01}"#,
    )
    .unwrap();
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(msb_problem_from_json(json.as_ptr(), &mut p), MsbStatus::Ok);
        let mut sol = ptr::null_mut();
        assert_eq!(msb_solve(p, 1e-15, 1, &mut sol), MsbStatus::NotConverged);
        assert!(!sol.is_null());
        assert!(!msb_solution_converged(sol));
        let mut out = ptr::null_mut();
        assert_eq!(msb_barycenter_to_json(sol, true, &mut out), MsbStatus::NotConverged);
        msb_solution_free(sol);
        msb_problem_free(p);
    }
}

#[test]
fn capacity_status() {
    let n = 25;
    let sizes = [n; 3];
    let points: Vec<f64> = (0..3 * n).map(|k| (k % n) as f64 / n as f64).collect();
    let weights = vec![1.0 / n as f64; 3 * n];
    let alpha = [0.3, 0.3, 0.4];
    unsafe {
        let mut p = ptr::null_mut();
        let s = msb_problem_new(3, 1, sizes.as_ptr(), points.as_ptr(), weights.as_ptr(), alpha.as_ptr(), 1.0, &mut p);
        assert_eq!(s, MsbStatus::Ok);
        let mut v = 0.0;
        assert_eq!(msb_exact_value(p, &mut v), MsbStatus::Capacity);
        msb_problem_free(p);
    }
}

#[test]
fn wasserstein_shift() {
    let xs = [0.0, 0.5];
    let ys = [0.5, 1.0];
    let w = [0.5, 0.5];
    let mut out = f64::NAN;
    let s = unsafe { msb_wasserstein(1, 2, xs.as_ptr(), w.as_ptr(), 2, ys.as_ptr(), w.as_ptr(), 1, &mut out) };
    assert_eq!(s, MsbStatus::Ok);
    assert!((out - 0.5).abs() < 1e-12);
    let s = unsafe { msb_wasserstein(1, 2, xs.as_ptr(), w.as_ptr(), 2, ys.as_ptr(), w.as_ptr(), 3, &mut out) };
    assert_eq!(s, MsbStatus::Validation);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/msb.h")).unwrap();
    for name in [
        "msb_last_error_message",
        "msb_problem_new",
        "msb_problem_from_json",
        "msb_problem_free",
        "msb_problem_m",
        "msb_problem_dim",
        "msb_solve",
        "msb_solution_free",
        "msb_solution_converged",
        "msb_solution_iterations",
        "msb_solution_dual_value",
        "msb_solution_primal_value",
        "msb_solution_potential",
        "msb_solution_to_json",
        "msb_barycenter_to_json",
        "msb_exact_value",
        "msb_wasserstein",
        "msb_string_free",
        "msb_version",
        "MSB_STATUS_NOT_CONVERGED = 3",
        "typedef struct msb_problem msb_problem",
    ] {
        assert!(header.contains(name), "{name} missing from msb.h");
    }
    let v = unsafe { CStr::from_ptr(msb_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
