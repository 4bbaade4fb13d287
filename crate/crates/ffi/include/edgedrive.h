#ifndef EDGEDRIVE_H
#define EDGEDRIVE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum EdStatus {
  ED_STATUS_OK = 0,
  ED_STATUS_NULL_POINTER = 1,
  ED_STATUS_INVALID_ARGUMENT = 2,
  ED_STATUS_CONFIG = 3,
  ED_STATUS_NUMERICAL = 4,
  ED_STATUS_IO = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  ED_STATUS_INTERNAL = 6,
} EdStatus;

/**
 * Built-in driving policy codes for [`ed_benchmark_json`].
 */
typedef enum EdPolicy {
  ED_POLICY_RANDOM = 0,
  ED_POLICY_BRAKING = 1,
} EdPolicy;

/**
 * Opaque closed-loop simulator: world, sensors and fusion.
 */
typedef struct EdSimulator EdSimulator;

/**
 * Outcome of one simulator tick.
 */
typedef struct EdStep {
  double reward;
  bool collided;
  bool lane_departed;
  bool done;
} EdStep;

/**
 * Ego vehicle pose and speed.
 */
typedef struct EdVehicle {
  double x;
  double y;
  double v;
  double heading;
} EdVehicle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *ed_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ed_version(void);

/**
 * Number of features written by [`ed_simulator_observation`].
 */
size_t ed_observation_len(void);

/**
 * Create a simulator from a JSON run configuration (`NULL` for defaults).
 * Weather codes: 0 clear, 1 fog, 2 rain, 3 snow.
 *
 * # Safety
 * `config_json` must be `NULL` or a NUL-terminated string; `out` must be
 * valid for writes.
 */
enum EdStatus ed_simulator_new(const char *config_json,
                               uint32_t weather,
                               uint64_t seed,
                               struct EdSimulator **out);

/**
 * Release a simulator. `NULL` is ignored.
 *
 * # Safety
 * `sim` must come from [`ed_simulator_new`] and not be used afterwards.
 */
void ed_simulator_free(struct EdSimulator *sim);

/**
 * Apply an action for one tick. Action codes: 0 steer left, 1 steer
 * right, 2 maintain, 3 accelerate, 4 brake.
 *
 * # Safety
 * `sim` must be a live handle and `out` valid for writes.
 */
enum EdStatus ed_simulator_step(struct EdSimulator *sim, uint32_t action, struct EdStep *out);

/**
 * Write the agent observation into `out[0..len]`; `len` must equal
 * [`ed_observation_len`].
 *
 * # Safety
 * `sim` must be a live handle and `out` valid for `len` doubles.
 */
enum EdStatus ed_simulator_observation(const struct EdSimulator *sim, double *out, size_t len);

/**
 * True ego state.
 *
 * # Safety
 * `sim` must be a live handle and `out` valid for writes.
 */
enum EdStatus ed_simulator_ego(const struct EdSimulator *sim, struct EdVehicle *out);

/**
 * Current tick and whether the episode has ended.
 *
 * # Safety
 * `sim` must be a live handle; `tick` and `done` valid for writes.
 */
enum EdStatus ed_simulator_status(const struct EdSimulator *sim, uint32_t *tick, bool *done);

/**
 * Inverse-variance fusion of `n` scalar estimates.
 *
 * # Safety
 * `means` and `variances` must be valid for `n` doubles; `out_mean` and
 * `out_variance` valid for writes.
 */
enum EdStatus ed_fuse(const double *means,
                      const double *variances,
                      size_t n,
                      double *out_mean,
                      double *out_variance);

/**
 * Run the benchmark grid of the configuration's `benchmark` section with a
 * built-in policy (an [`EdPolicy`] code) and return the report as JSON in
 * `*out_json`.
 *
 * # Safety
 * `config_json` must be `NULL` or a NUL-terminated string; `out_json`
 * valid for writes. Release the result with [`ed_string_free`].
 */
enum EdStatus ed_benchmark_json(const char *config_json, uint32_t policy, char **out_json);

/**
 * Release a string returned by this library. `NULL` is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void ed_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EDGEDRIVE_H */
