#ifndef CAREQ_H
#define CAREQ_H

/* Generated by cbindgen from the careq-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every FFI call.
typedef enum CareqStatus {
  // Success.
  CAREQ_STATUS_OK = 0,
  // A required pointer argument was null.
  CAREQ_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  CAREQ_STATUS_INVALID_UTF8 = 2,
  // The input could not be read or parsed as JSON.
  CAREQ_STATUS_PARSE = 3,
  // The scenario failed validation.
  CAREQ_STATUS_INVALID = 4,
  // The solver failed to converge.
  CAREQ_STATUS_SOLVER = 5,
  // A caller-supplied buffer was too small.
  CAREQ_STATUS_BUFFER_TOO_SMALL = 6,
} CareqStatus;

// Opaque equilibrium handle.
typedef struct CareqEquilibrium CareqEquilibrium;

// Opaque scenario handle.
typedef struct CareqScenario CareqScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread, or an empty string.
// The pointer is invalidated by the next failing call on the same thread.
const char *careq_last_error(void);

// Version of the underlying library as a static NUL-terminated string.
const char *careq_version(void);

// Loads and validates a scenario from a JSON file.
//
// # Safety
// `path` must point to a NUL-terminated string and `out` to writable
// storage for one pointer.
enum CareqStatus careq_scenario_load(const char *path, struct CareqScenario **out);

// Parses and validates a scenario from a JSON string.
//
// # Safety
// `json` must point to a NUL-terminated string and `out` to writable
// storage for one pointer.
enum CareqStatus careq_scenario_from_json(const char *json, struct CareqScenario **out);

// Frees a scenario handle; a null handle is a no-op.
//
// # Safety
// `scenario` must be a handle from this library, freed at most once.
void careq_scenario_free(struct CareqScenario *scenario);

// Number of facility levels of a scenario.
//
// # Safety
// Both pointers must be valid; `scenario` must be a live handle.
enum CareqStatus careq_scenario_num_levels(const struct CareqScenario *scenario, uintptr_t *out);

// Number of patient classes of a scenario.
//
// # Safety
// Both pointers must be valid; `scenario` must be a live handle.
enum CareqStatus careq_scenario_num_classes(const struct CareqScenario *scenario, uintptr_t *out);

// Computes the unique equilibrium of a scenario.
//
// `grad_tol` and `max_iters` of zero (or below) select the defaults
// (1e-10 normalized, 200 iterations).
//
// # Safety
// `scenario` must be a live handle and `out` writable storage for one
// pointer.
enum CareqStatus careq_solve(const struct CareqScenario *scenario,
                             double grad_tol,
                             uintptr_t max_iters,
                             struct CareqEquilibrium **out);

// Frees an equilibrium handle; a null handle is a no-op.
//
// # Safety
// `equilibrium` must be a handle from this library, freed at most once.
void careq_equilibrium_free(struct CareqEquilibrium *equilibrium);

// Copies the equilibrium waits (hours), one per level.
//
// # Safety
// `equilibrium` must be a live handle; `buffer` must hold `capacity`
// doubles.
enum CareqStatus careq_equilibrium_waits(const struct CareqEquilibrium *equilibrium,
                                         double *buffer,
                                         uintptr_t capacity);

// Copies the equilibrium flows (patients/year), one per level.
//
// # Safety
// `equilibrium` must be a live handle; `buffer` must hold `capacity`
// doubles.
enum CareqStatus careq_equilibrium_flows(const struct CareqEquilibrium *equilibrium,
                                         double *buffer,
                                         uintptr_t capacity);

// Copies one class's choice probabilities over `{opt-out} + levels`
// (`num_levels + 1` entries; the opt-out entry is zero when the scenario
// disables opting out).
//
// # Safety
// `equilibrium` must be a live handle; `buffer` must hold `capacity`
// doubles.
enum CareqStatus careq_equilibrium_choice(const struct CareqEquilibrium *equilibrium,
                                          uintptr_t class_index,
                                          double *buffer,
                                          uintptr_t capacity);

// Number of entries in each of this equilibrium's wait/flow vectors.
//
// # Safety
// Both pointers must be valid; `equilibrium` must be a live handle.
enum CareqStatus careq_equilibrium_num_levels(const struct CareqEquilibrium *equilibrium,
                                              uintptr_t *out);

// Objective value at the equilibrium.
//
// # Safety
// Both pointers must be valid; `equilibrium` must be a live handle.
enum CareqStatus careq_equilibrium_objective(const struct CareqEquilibrium *equilibrium,
                                             double *out);

// Normalized gradient sup-norm certifying convergence.
//
// # Safety
// Both pointers must be valid; `equilibrium` must be a live handle.
enum CareqStatus careq_equilibrium_grad_norm(const struct CareqEquilibrium *equilibrium,
                                             double *out);

// Whether every equilibrium wait is within the 10-hour feasibility cap.
//
// # Safety
// Both pointers must be valid; `equilibrium` must be a live handle.
enum CareqStatus careq_equilibrium_feasible(const struct CareqEquilibrium *equilibrium, bool *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAREQ_H */
