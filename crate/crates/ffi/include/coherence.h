#ifndef COHERENCE_H
#define COHERENCE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every call.
 */
typedef enum {
  COHERENCE_STATUS_OK = 0,
  COHERENCE_STATUS_NULL_POINTER = 1,
  COHERENCE_STATUS_INVALID_UTF8 = 2,
  COHERENCE_STATUS_INVALID_ARGUMENT = 3,
  COHERENCE_STATUS_DIMENSION_MISMATCH = 4,
  COHERENCE_STATUS_INFEASIBLE = 5,
  COHERENCE_STATUS_PARSE_ERROR = 6,
  COHERENCE_STATUS_UNSUPPORTED = 7,
  COHERENCE_STATUS_INTERNAL = 8,
  COHERENCE_STATUS_PANIC = 9,
} CoherenceStatus;

/*
 Opaque e-process state.
 */
typedef struct CoherenceEProcess CoherenceEProcess;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. The pointer is
 owned by the library and valid until the next call on the same thread.
 */
const char *coherence_last_error(void);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must come from this library and not have been freed already.
 */
void coherence_string_free(char *s);

/*
 Projects the `m`-coordinate quote `q` onto the polytope of relation
 `kind` (`neg`, `and`, `or`, `partition`, `ladder`, `paraphrase`).

 Writes `m` values to `out` and the L2 residual to `residual` (may be null).

 # Safety
 `q` and `out` must point to `m` doubles; `kind` must be a C string.
 */
CoherenceStatus coherence_project(const char *kind,
                                  uintptr_t m,
                                  const double *q,
                                  double *out,
                                  double *residual);

/*
 Dutch-book exposure of quote `q` under relation `kind`.

 # Safety
 `q` must point to `m` doubles, `out` to one double.
 */
CoherenceStatus coherence_exposure(const char *kind, uintptr_t m, const double *q, double *out);

/*
 Certifies one composition record given as JSON (the `certify` input
 format) and returns the certificate as a newly allocated JSON string.

 # Safety
 `input` must be a C string; `out` must be writable. Free `*out` with
 [`coherence_string_free`].
 */
CoherenceStatus coherence_certify_json(const char *input, char **out);

/*
 Growth-optimal bet size for an alternative of size `delta`.
 */
double coherence_optimal_lambda(double delta, uint64_t m, uint64_t k_samples);

/*
 Creates an e-process watching the `n` significance levels in `alphas`.

 # Safety
 `alphas` must point to `n` doubles; `out` must be writable.
 */
CoherenceStatus coherence_eprocess_new(const double *alphas, uintptr_t n, CoherenceEProcess **out);

/*
 Feeds one step: squared residual, clique size and per-coordinate sample count.

 # Safety
 `h` must be a live handle.
 */
CoherenceStatus coherence_eprocess_update(CoherenceEProcess *h,
                                          double eps_sq,
                                          uint64_t m,
                                          uint64_t k_samples);

/*
 Current log of the mixture e-value.

 # Safety
 `h` must be a live handle; `out` writable.
 */
CoherenceStatus coherence_eprocess_log_e_mix(CoherenceEProcess *h, double *out);

/*
 Writes 1 to `reject` once the running e-value has reached `1/alpha`, else 0.

 # Safety
 `h` must be a live handle; `reject` writable.
 */
CoherenceStatus coherence_eprocess_decide(CoherenceEProcess *h, double alpha, uint8_t *reject);

/*
 Releases a handle. Null is ignored.

 # Safety
 `h` must come from [`coherence_eprocess_new`] and not be used afterwards.
 */
void coherence_eprocess_free(CoherenceEProcess *h);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COHERENCE_H */
