#ifndef PHASEHIT_H
#define PHASEHIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum PhStatus {
  PH_STATUS_OK = 0,
  PH_STATUS_NULL_POINTER = 1,
  PH_STATUS_INVALID_UTF8 = 2,
  PH_STATUS_PARSE = 3,
  PH_STATUS_INVALID_MODEL = 4,
  PH_STATUS_DOMAIN = 5,
  PH_STATUS_NUMERIC = 6,
  PH_STATUS_INCONSISTENT = 7,
  PH_STATUS_IO = 8,
  PH_STATUS_PANIC = 9,
} PhStatus;

/**
 * An immutable model.
 */
typedef struct PhModel PhModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *ph_last_error_message(void);

/**
 * Parses a model from TOML text.
 *
 * # Safety
 * `text` must be a nul-terminated string; `out` must be writable.
 */
enum PhStatus ph_model_from_toml(const char *text, struct PhModel **out);

/**
 * Loads a model file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum PhStatus ph_model_from_path(const char *path, struct PhModel **out);

/**
 * The bundled 27-state lattice model.
 *
 * # Safety
 * `out` must be writable.
 */
enum PhStatus ph_model_example(struct PhModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `m` must come from a `ph_model_*` constructor and not be used afterwards.
 */
void ph_model_free(struct PhModel *m);

/**
 * Number of states.
 *
 * # Safety
 * `m` must be a live handle; `out` must be writable.
 */
enum PhStatus ph_model_n_states(const struct PhModel *m, uintptr_t *out);

/**
 * Number of targets.
 *
 * # Safety
 * `m` must be a live handle; `out` must be writable.
 */
enum PhStatus ph_model_n_targets(const struct PhModel *m, uintptr_t *out);

/**
 * Joint density of the hitting times of `keys[i]` at `times[i]`; the region
 * is read off the ties in `times`.
 *
 * # Safety
 * `keys` and `times` must hold `len` elements; `out` must be writable.
 */
enum PhStatus ph_density(const struct PhModel *m,
                         const uint32_t *keys,
                         const double *times,
                         uintptr_t len,
                         double *out);

/**
 * Joint density on `region` (e.g. `"{2,3}<{1}"`) at block times
 * `block_times[0..len]`.
 *
 * # Safety
 * `region` must be a nul-terminated string, `block_times` must hold `len`
 * elements and `out` must be writable.
 */
enum PhStatus ph_density_in_region(const struct PhModel *m,
                                   const char *region,
                                   const double *block_times,
                                   uintptr_t len,
                                   double *out);

/**
 * Probability of a constraint expression such as
 * `"tau(1) > 0.5 && tau(2) == tau(3)"`.
 *
 * # Safety
 * `expr` must be a nul-terminated string; `out` must be writable.
 */
enum PhStatus ph_tail(const struct PhModel *m, const char *expr, double *out);

/**
 * `P(τ_{k1} = τ_{k2} < ∞)` from the first-step equality system.
 *
 * # Safety
 * `m` must be a live handle; `out` must be writable.
 */
enum PhStatus ph_equality_prob(const struct PhModel *m, uint32_t k1, uint32_t k2, double *out);

/**
 * `P(τ_k > u)`.
 *
 * # Safety
 * `m` must be a live handle; `out` must be writable.
 */
enum PhStatus ph_survival(const struct PhModel *m, uint32_t key, double u, double *out);

/**
 * Simulated frequency of `τ ∈ region` over `n` paths. A `horizon` of zero or
 * less selects the default horizon.
 *
 * # Safety
 * `region` must be a nul-terminated string; `value` and `stderr_out` must be writable.
 */
enum PhStatus ph_simulate_region(const struct PhModel *m,
                                 const char *region,
                                 uintptr_t n,
                                 double horizon,
                                 uint64_t seed,
                                 double *value,
                                 double *stderr_out);

/**
 * Library version as a static string.
 */
const char *ph_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHASEHIT_H */
