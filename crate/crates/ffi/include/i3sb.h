#ifndef I3SB_H
#define I3SB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum I3sbStatus {
  I3SB_STATUS_OK = 0,
  I3SB_STATUS_NULL_POINTER = 1,
  I3SB_STATUS_INVALID_ARGUMENT = 2,
  I3SB_STATUS_IO = 3,
  I3SB_STATUS_FORMAT = 4,
  I3SB_STATUS_SHAPE_MISMATCH = 5,
  I3SB_STATUS_STEP_OUT_OF_RANGE = 6,
  I3SB_STATUS_INFEASIBLE = 7,
  I3SB_STATUS_NON_FINITE = 8,
  I3SB_STATUS_CONFIG = 9,
  I3SB_STATUS_CALLBACK = 10,
  I3SB_STATUS_PANIC = 11,
} I3sbStatus;

typedef enum I3sbBetaKind {
  I3SB_BETA_KIND_SYMMETRIC_TRIANGULAR = 0,
  I3SB_BETA_KIND_CONSTANT = 1,
} I3sbBetaKind;

typedef enum I3sbSpacing {
  I3SB_SPACING_QUADRATIC = 0,
  I3SB_SPACING_UNIFORM = 1,
} I3sbSpacing;

typedef enum I3sbPolicyKind {
  I3SB_POLICY_KIND_I2SB_EQUIVALENT = 0,
  I3SB_POLICY_KIND_STEP_FUNCTION = 1,
  I3SB_POLICY_KIND_CUSTOM_TABLE = 2,
} I3sbPolicyKind;

typedef struct I3sbPredictor I3sbPredictor;

typedef struct I3sbSchedule I3sbSchedule;

typedef struct I3sbTensor I3sbTensor;

typedef struct I3sbStepQuery {
  size_t n;
  double t;
  double sigma2;
  double sbar2;
} I3sbStepQuery;

typedef struct I3sbCoeffs {
  double a;
  double b;
  double c;
  double g2;
} I3sbCoeffs;

/**
 * `r` is read for step functions; `table`/`table_len` (N − 1 multipliers)
 * for custom tables.
 */
typedef struct I3sbPolicy {
  enum I3sbPolicyKind kind;
  double r;
  const double *table;
  size_t table_len;
} I3sbPolicy;

/**
 * ε-prediction callback. `x_t`, `x_n` and `out` each hold
 * `height·width·channels` row-major values. Return 0 on success.
 */
typedef int32_t (*I3sbPredictFn)(void *user,
                                 const double *x_t,
                                 const double *x_n,
                                 size_t height,
                                 size_t width,
                                 size_t channels,
                                 const struct I3sbStepQuery *query,
                                 double *out);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *i3sb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *i3sb_version(void);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum I3sbStatus i3sb_schedule_new(enum I3sbBetaKind beta_kind,
                                  double beta_min,
                                  double beta_max,
                                  size_t steps,
                                  enum I3sbSpacing spacing,
                                  double t_min,
                                  struct I3sbSchedule **out);

/**
 * # Safety
 * `s` must be null or a handle from [`i3sb_schedule_new`], not yet freed.
 */
void i3sb_schedule_free(struct I3sbSchedule *s);

/**
 * Number of generative steps N, or 0 for a null handle.
 *
 * # Safety
 * `s` must be null or a live schedule handle.
 */
size_t i3sb_schedule_steps(const struct I3sbSchedule *s);

/**
 * Step query (time, σ², σ̄²) at grid index `n ∈ [0, N]`.
 *
 * # Safety
 * `s` must be a live schedule handle and `out` a valid pointer.
 */
enum I3sbStatus i3sb_schedule_query(const struct I3sbSchedule *s,
                                    size_t n,
                                    struct I3sbStepQuery *out);

/**
 * Mean and variance of the bridge marginal at step `n` for scalar endpoints.
 *
 * # Safety
 * `s` must be a live schedule handle; `mean` and `variance` valid pointers.
 */
enum I3sbStatus i3sb_q_marginal(const struct I3sbSchedule *s,
                                size_t n,
                                double x0,
                                double xn,
                                double *mean,
                                double *variance);

/**
 * Coefficients of the generalized posterior at step `n ∈ [1, N − 2]`.
 *
 * # Safety
 * `s` must be a live schedule handle and `out` a valid pointer.
 */
enum I3sbStatus i3sb_pg_coeffs(const struct I3sbSchedule *s,
                               size_t n,
                               double g,
                               struct I3sbCoeffs *out);

/**
 * Noise level `g_n` chosen by `policy` at step `n ∈ [1, N − 1]`.
 *
 * # Safety
 * `s` must be a live schedule handle, `policy` valid (with a readable table
 * for custom tables) and `out` a valid pointer.
 */
enum I3sbStatus i3sb_gn_value(const struct I3sbSchedule *s,
                              size_t n,
                              const struct I3sbPolicy *policy,
                              double *out);

/**
 * Copies `height·width·channels` floats from `data`.
 *
 * # Safety
 * `data` must point to that many readable floats; `out` must be valid.
 */
enum I3sbStatus i3sb_tensor_new(size_t height,
                                size_t width,
                                size_t channels,
                                const float *data,
                                float range_min,
                                float range_max,
                                struct I3sbTensor **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum I3sbStatus i3sb_tensor_read(const char *path, struct I3sbTensor **out);

/**
 * # Safety
 * `t` must be a live tensor handle and `path` a NUL-terminated string.
 */
enum I3sbStatus i3sb_tensor_write(const struct I3sbTensor *t, const char *path);

/**
 * # Safety
 * `t` must be a live tensor handle; each output pointer may be null.
 */
enum I3sbStatus i3sb_tensor_shape(const struct I3sbTensor *t,
                                  size_t *height,
                                  size_t *width,
                                  size_t *channels);

/**
 * Borrowed pointer to the tensor's row-major data, valid while the handle
 * lives. Null for a null handle.
 *
 * # Safety
 * `t` must be null or a live tensor handle.
 */
const float *i3sb_tensor_data(const struct I3sbTensor *t);

/**
 * # Safety
 * `t` must be null or a tensor handle not yet freed.
 */
void i3sb_tensor_free(struct I3sbTensor *t);

/**
 * Predictor that knows the clean image (a copy of `x0` is taken).
 *
 * # Safety
 * `x0` must be a live tensor handle and `out` a valid pointer.
 */
enum I3sbStatus i3sb_predictor_cheat(const struct I3sbTensor *x0, struct I3sbPredictor **out);

/**
 * Exact MMSE predictor for the per-pixel model `X0 ~ N(mu0, s0sq)`,
 * `X1 = X0 + N(0, s1sq)`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum I3sbStatus i3sb_predictor_analytic(double mu0,
                                        double s0sq,
                                        double s1sq,
                                        struct I3sbPredictor **out);

/**
 * Loads a trained network saved by the `train` command.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum I3sbStatus i3sb_predictor_mlp_load(const char *dir, struct I3sbPredictor **out);

/**
 * Wraps a C callback as a predictor. `user` is passed through unchanged.
 *
 * # Safety
 * `f` must be callable with the documented arguments for as long as the
 * handle lives; `out` must be a valid pointer.
 */
enum I3sbStatus i3sb_predictor_callback(I3sbPredictFn f, void *user, struct I3sbPredictor **out);

/**
 * # Safety
 * `p` must be null or a predictor handle not yet freed.
 */
void i3sb_predictor_free(struct I3sbPredictor *p);

/**
 * Restores `xn`, drawing noise from stream `stream` of `seed`. The result
 * is a new tensor handle owned by the caller.
 *
 * # Safety
 * All handles must be live, `policy` valid and `out` a valid pointer.
 */
enum I3sbStatus i3sb_generate(const struct I3sbTensor *xn,
                              const struct I3sbPredictor *predictor,
                              const struct I3sbSchedule *schedule,
                              const struct I3sbPolicy *policy,
                              uint64_t seed,
                              uint64_t stream,
                              struct I3sbTensor **out);

/**
 * # Safety
 * `a` and `b` must be live tensor handles and `out` a valid pointer.
 */
enum I3sbStatus i3sb_ssim(const struct I3sbTensor *a,
                          const struct I3sbTensor *b,
                          double data_range,
                          double *out);

/**
 * Normalized Haralick distance with the four unit offsets and a
 * symmetric co-occurrence matrix over `levels` bins of `[window_min, window_max]`.
 *
 * # Safety
 * `test` and `reference` must be live tensor handles and `out` valid.
 */
enum I3sbStatus i3sb_haralick_distance(const struct I3sbTensor *test,
                                       const struct I3sbTensor *reference,
                                       size_t levels,
                                       double window_min,
                                       double window_max,
                                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* I3SB_H */
