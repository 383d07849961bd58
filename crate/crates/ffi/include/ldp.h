#ifndef LDP_H
#define LDP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Route used by [`ldp_rate`].
typedef enum LdpRoute {
  LDP_ROUTE_DIRECT = 0,
  LDP_ROUTE_BALANCED = 1,
  LDP_ROUTE_LEGENDRE = 2,
} LdpRoute;

// Result code of every fallible call.
typedef enum LdpStatus {
  LDP_STATUS_OK = 0,
  // A required pointer argument was null.
  LDP_STATUS_NULL_POINTER = 1,
  // An argument is out of range (state index, time, route).
  LDP_STATUS_INVALID_ARGUMENT = 2,
  // Input data violates a structural requirement (generator, measure, positivity).
  LDP_STATUS_VALIDATION = 3,
  // An iterative method stopped short of its tolerance. Outputs hold the best iterate.
  LDP_STATUS_NOT_CONVERGED = 4,
  // Overflow or another numerical breakdown.
  LDP_STATUS_NUMERICAL = 5,
  // An internal panic was caught.
  LDP_STATUS_PANIC = 6,
} LdpStatus;

// Opaque handle to a validated generator.
typedef struct LdpQMatrix LdpQMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or an empty string after a
// successful one. The pointer stays valid until the next call on this thread.
const char *ldp_last_error(void);

// Library version as a static NUL-terminated string.
const char *ldp_version(void);

// Validates an `n x n` row-major generator and stores a new handle in `*out`.
//
// # Safety
// `row_major` must point to `n * n` readable doubles and `out` to writable storage.
enum LdpStatus ldp_qmatrix_new(size_t n, const double *row_major, struct LdpQMatrix **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `q` must come from [`ldp_qmatrix_new`] and not have been freed.
void ldp_qmatrix_free(struct LdpQMatrix *q);

// Number of states, or 0 for a null handle.
//
// # Safety
// `q` must be null or a live handle.
size_t ldp_qmatrix_n(const struct LdpQMatrix *q);

// Writes the killing rates `-sum_j q_ij` into `out`.
//
// # Safety
// `q` must be a live handle and `out` must hold `n` doubles.
enum LdpStatus ldp_qmatrix_killing(const struct LdpQMatrix *q, double *out);

// Principal eigenvalue of `Q` and, when `vector_out` is not null, its positive
// right eigenvector normalized to first entry 1.
//
// # Safety
// `q` must be a live handle, `lambda_out` writable, and `vector_out` null or `n` doubles.
enum LdpStatus ldp_principal_eigenvalue(const struct LdpQMatrix *q,
                                        double *lambda_out,
                                        double *vector_out);

// `out = exp(tQ) v`.
//
// # Safety
// `q` must be a live handle; `v` and `out` must each hold `n` doubles and may alias.
enum LdpStatus ldp_expm_apply(const struct LdpQMatrix *q, double t, const double *v, double *out);

// Probability that the chain started in `state` is still alive at time `t`.
//
// # Safety
// `q` must be a live handle and `out` writable.
enum LdpStatus ldp_survival_probability(const struct LdpQMatrix *q,
                                        size_t state,
                                        double t,
                                        double *out);

// Solves the balancing equations for weights `beta`, writing `alpha` (with
// `alpha[0] = 1`) and, when not null, the max-norm residual.
//
// # Safety
// `q` must be a live handle, `beta` and `alpha_out` must hold `n` doubles,
// `residual_out` must be null or writable.
enum LdpStatus ldp_balance(const struct LdpQMatrix *q,
                           const double *beta,
                           double tol,
                           double *alpha_out,
                           double *residual_out);

// Rate function value at the probability vector `mu` by the chosen route.
// When `witness_out` is not null it receives the route's optimizer (first
// entry 1). An unconverged solve still writes its best value and returns
// [`LdpStatus::NotConverged`].
//
// # Safety
// `q` must be a live handle, `mu` must hold `n` doubles, `value_out` must be
// writable and `witness_out` null or `n` doubles.
enum LdpStatus ldp_rate(const struct LdpQMatrix *q,
                        const double *mu,
                        enum LdpRoute route,
                        double *value_out,
                        double *witness_out);

// Survival decay rate from the variational formula, with the minimizing
// measure written to `argmin_out` when it is not null.
//
// # Safety
// `q` must be a live handle, `value_out` writable and `argmin_out` null or `n` doubles.
enum LdpStatus ldp_survival_rate_variational(const struct LdpQMatrix *q,
                                             double *value_out,
                                             double *argmin_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LDP_H */
