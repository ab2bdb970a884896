//! Entropic multimarginal optimal transport and the multimarginal
//! Schrödinger barycenter on finitely supported measures in `[-1, 1]^d`.
//!
//! * [`measures`]: discrete measures, populations and seeded sampling.
//! * [`cost`]: the barycentric cost `c_α` and map `T_α` over the product tensor.
//! * [`solver`]: the dual objective and cyclic log-domain Sinkhorn.
//! * [`barycenter`]: pushforward `(T_α)_♯ π_ε` and test-function integrals.
//! * [`exact`]: unregularized LP oracle, exact `W_1`/`W_2`, block
//!   approximation.
//! * [`experiments`]: Monte Carlo rate harness.
//! * [`cli`]: the `msb` command-line front end.

pub mod barycenter;
pub mod cli;
pub mod cost;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod measures;
pub mod solver;

pub use barycenter::{compute_barycenter, coupling_expectation, integrate, BarycenterMeasure, TestFunction};
pub use cost::{cost_alpha, cost_sup_bound, t_alpha, CostAccessor};
pub use error::{MsbError, Result};
pub use exact::{block_approximation, exact_mot, wasserstein_p, LpSolveReport};
pub use measures::{sample_empirical, validate, DiscreteMeasure, PopulationSpec, Problem};
pub use solver::{dual_objective, gradient, gradient_norm, sinkhorn_solve, PotentialVector, Solution};

/// Largest product support materialized as a dense cost tensor.
pub const DEFAULT_TENSOR_CAP: usize = 2_000_000;
/// Largest number of LP variables accepted by the exact oracle.
pub const DEFAULT_LP_CAP: usize = 10_000;
pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_SWEEPS: usize = 10_000;

/// Floats in CSV output: 17 significant digits, scientific notation.
pub(crate) fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}
