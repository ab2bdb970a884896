#ifndef MSB_H
#define MSB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. The nonzero library codes equal the CLI exit codes.
 */
typedef enum msb_status {
  MSB_STATUS_OK = 0,
  MSB_STATUS_VALIDATION = 2,
  MSB_STATUS_NOT_CONVERGED = 3,
  MSB_STATUS_CAPACITY = 4,
  MSB_STATUS_NULL_POINTER = 5,
  MSB_STATUS_INVALID_UTF8 = 6,
  MSB_STATUS_PANIC = 7,
} msb_status;

/**
 * Opaque problem handle.
 */
typedef struct msb_problem msb_problem;

/**
 * Opaque solution handle.
 */
typedef struct msb_solution msb_solution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. The pointer stays valid
 * until the next call into this library from the same thread.
 */
const char *msb_last_error_message(void);

/**
 * Creates a problem with `m` marginals in dimension `dim`. Marginal `j` has
 * `sizes[j]` atoms; `points` concatenates all atoms row-major, marginal by
 * marginal, and `weights` all weights in the same order.
 *
 * # Safety
 * `sizes` and `alpha` must hold `m` values, `weights` `Σ sizes` values and
 * `points` `dim · Σ sizes` values. `out` must be a valid pointer.
 */
enum msb_status msb_problem_new(size_t m,
                                size_t dim,
                                const size_t *sizes,
                                const double *points,
                                const double *weights,
                                const double *alpha,
                                double epsilon,
                                struct msb_problem **out);

/**
 * Parses a problem from its JSON form (`marginals`, `alpha`, `epsilon`).
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum msb_status msb_problem_from_json(const char *json, struct msb_problem **out);

/**
 * # Safety
 * `problem` must come from this library and not be used afterwards.
 */
void msb_problem_free(struct msb_problem *problem);

/**
 * Number of marginals, 0 for a null handle.
 *
 * # Safety
 * `problem` must be null or a live handle.
 */
size_t msb_problem_m(const struct msb_problem *problem);

/**
 * # Safety
 * `problem` must be null or a live handle.
 */
size_t msb_problem_dim(const struct msb_problem *problem);

/**
 * Runs the Sinkhorn solver. On budget exhaustion the solution is still
 * returned through `out` together with `MsbStatus::NotConverged`.
 *
 * # Safety
 * `problem` must be a live handle and `out` a valid pointer.
 */
enum msb_status msb_solve(const struct msb_problem *problem,
                          double tol,
                          size_t max_sweeps,
                          struct msb_solution **out);

/**
 * # Safety
 * `solution` must come from this library and not be used afterwards.
 */
void msb_solution_free(struct msb_solution *solution);

/**
 * # Safety
 * `solution` must be null or a live handle.
 */
bool msb_solution_converged(const struct msb_solution *solution);

/**
 * # Safety
 * `solution` must be null or a live handle.
 */
size_t msb_solution_iterations(const struct msb_solution *solution);

/**
 * Dual objective at the returned potentials; NaN for a null handle.
 *
 * # Safety
 * `solution` must be null or a live handle.
 */
double msb_solution_dual_value(const struct msb_solution *solution);

/**
 * `⟨c, π⟩ + ε KL(π ‖ ⊗ν)`; NaN for a null handle.
 *
 * # Safety
 * `solution` must be null or a live handle.
 */
double msb_solution_primal_value(const struct msb_solution *solution);

/**
 * Copies potential `j` into `buf` (length `len`, the marginal's atom
 * count), NaN at zero-weight atoms.
 *
 * # Safety
 * `solution` must be a live handle and `buf` hold `len` values.
 */
enum msb_status msb_solution_potential(const struct msb_solution *solution,
                                       size_t j,
                                       double *buf,
                                       size_t len);

/**
 * Solution as JSON.
 *
 * # Safety
 * `solution` must be a live handle and `out` a valid pointer.
 */
enum msb_status msb_solution_to_json(const struct msb_solution *solution, char **out);

/**
 * Barycenter of a converged solution as JSON.
 *
 * # Safety
 * `solution` must be a live handle and `out` a valid pointer.
 */
enum msb_status msb_barycenter_to_json(const struct msb_solution *solution,
                                       bool consolidate,
                                       char **out);

/**
 * Optimal value of the unregularized multimarginal LP.
 *
 * # Safety
 * `problem` must be a live handle and `out` a valid pointer.
 */
enum msb_status msb_exact_value(const struct msb_problem *problem, double *out);

/**
 * `W_p(μ, ν)` for `p ∈ {1, 2}` between two measures in dimension `dim`.
 *
 * # Safety
 * Point arrays must hold `n · dim` values, weight arrays `n` values, and
 * `out` must be a valid pointer.
 */
enum msb_status msb_wasserstein(size_t dim,
                                size_t n_mu,
                                const double *points_mu,
                                const double *weights_mu,
                                size_t n_nu,
                                const double *points_nu,
                                const double *weights_nu,
                                uint32_t p,
                                double *out);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void msb_string_free(char *s);

/**
 * Library version, a static string.
 */
const char *msb_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSB_H */
