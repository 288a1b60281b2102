#ifndef POSI_RIP_H
#define POSI_RIP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Degrees of freedom value meaning r = infinity.
 */
#define POSI_DOF_INF UINT64_MAX

/**
 * Result of an FFI call.
 */
typedef enum PosiStatus {
  POSI_STATUS_OK = 0,
  POSI_STATUS_NULL_POINTER = 1,
  /**
   * Invalid argument or failed validation.
   */
  POSI_STATUS_INVALID_ARGUMENT = 2,
  /**
   * NoRoot, EnumerationLimit, rank deficiency or similar.
   */
  POSI_STATUS_NUMERIC_FAILURE = 3,
  POSI_STATUS_IO = 4,
  POSI_STATUS_PANIC = 5,
} PosiStatus;

/**
 * Opaque design matrix.
 */
typedef struct PosiDesign PosiDesign;

/**
 * Opaque set of normalized contrast directions for a model family.
 */
typedef struct PosiDirections PosiDirections;

typedef struct PosiRip {
  double kappa;
  double delta;
  uint64_t subsets_examined;
} PosiRip;

typedef struct PosiEstimate {
  double k_hat;
  double k_lo;
  double k_hi;
  double k_se;
  double gauss_width_hat;
  double gauss_width_se;
} PosiEstimate;

/**
 * Upper bounds for one configuration. `u_tilde_rip` is NaN when it is not
 * defined (min(n, p) < 2).
 */
typedef struct PosiBounds {
  double u_orth;
  double u_sparse;
  double u_rip;
  double u_bar_sparse;
  double u_bar_rip;
  double u_tilde_rip;
} PosiBounds;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread (empty after success).
 * The pointer stays valid until the next call on the same thread.
 */
const char *posi_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *posi_version(void);

/**
 * Creates a design from `n * p` row-major values.
 *
 * # Safety
 * `values` must point to `n * p` doubles and `out` must be writable.
 */
enum PosiStatus posi_design_from_rows(const double *values,
                                      size_t n,
                                      size_t p,
                                      struct PosiDesign **out);

/**
 * Creates a design from an ensemble spec such as `equicorr:p=20,k=10,c=0.2`.
 *
 * # Safety
 * `spec` must be a NUL-terminated string and `out` must be writable.
 */
enum PosiStatus posi_design_from_ensemble(const char *spec, struct PosiDesign **out);

/**
 * Reads a headerless numeric CSV design.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` must be writable.
 */
enum PosiStatus posi_design_read_csv(const char *path, struct PosiDesign **out);

/**
 * Releases a design. Null is ignored.
 *
 * # Safety
 * `design` must come from a `posi_design_*` constructor and not be used
 * afterwards.
 */
void posi_design_free(struct PosiDesign *design);

/**
 * # Safety
 * `design` must be a live handle; `n` and `p` must be writable.
 */
enum PosiStatus posi_design_dims(const struct PosiDesign *design, size_t *n, size_t *p);

/**
 * Exhaustive kappa(X, s) and delta(X, s), failing above `cap` subsets.
 *
 * # Safety
 * `design` must be a live handle and `out` writable.
 */
enum PosiStatus posi_rip(const struct PosiDesign *design,
                         size_t s,
                         uint64_t cap,
                         struct PosiRip *out);

/**
 * Builds the contrast directions of all models of size 1..=s.
 *
 * # Safety
 * `design` must be a live handle and `out` writable.
 */
enum PosiStatus posi_directions_build(const struct PosiDesign *design,
                                      size_t s,
                                      uint64_t cap,
                                      struct PosiDirections **out);

/**
 * Number of distinct directions in the set (0 for null).
 *
 * # Safety
 * `dirs` must be null or a live handle.
 */
size_t posi_directions_len(const struct PosiDirections *dirs);

/**
 * Releases a direction set. Null is ignored.
 *
 * # Safety
 * `dirs` must come from `posi_directions_build` and not be used afterwards.
 */
void posi_directions_free(struct PosiDirections *dirs);

/**
 * Monte Carlo estimate of K at level 1 - alpha.
 *
 * # Safety
 * `dirs` must be a live handle and `out` writable.
 */
enum PosiStatus posi_estimate_k(const struct PosiDirections *dirs,
                                double alpha,
                                uint64_t r,
                                size_t reps,
                                uint64_t seed,
                                struct PosiEstimate *out);

/**
 * All upper bounds for `(p, s, n, delta, alpha, r)` with grid size `grid`.
 *
 * # Safety
 * `out` must be writable.
 */
enum PosiStatus posi_bounds(size_t p,
                            size_t s,
                            size_t n,
                            double delta,
                            double alpha,
                            uint64_t r,
                            size_t grid,
                            struct PosiBounds *out);

/**
 * B_l(q, r, rho) with rho given by its natural log.
 *
 * # Safety
 * `out` must be writable.
 */
enum PosiStatus posi_solve_b_ell(uint64_t q,
                                 uint64_t r,
                                 double ln_rho,
                                 double level,
                                 size_t grid,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POSI_RIP_H */
