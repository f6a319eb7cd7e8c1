#ifndef MERGESIM_H
#define MERGESIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported function.
 */
typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_NULL_POINTER = 1,
  MS_STATUS_INVALID_UTF8 = 2,
  MS_STATUS_INVALID_CONFIG = 3,
  MS_STATUS_SIMULATION = 4,
  MS_STATUS_OUT_OF_RANGE = 5,
  MS_STATUS_IO = 6,
  MS_STATUS_PANIC = 7,
} MsStatus;

typedef enum MsVerdict {
  MS_VERDICT_MERGED_SUCCESS = 0,
  MS_VERDICT_COLLISION = 1,
  MS_VERDICT_RAMP_END_FAILURE = 2,
  MS_VERDICT_TIMEOUT = 3,
} MsVerdict;

/**
 * Intent belief over the 22-cell grid.
 */
typedef struct MsBelief MsBelief;

/**
 * Result of one simulation run.
 */
typedef struct MsOutcome MsOutcome;

/**
 * Validated scenario.
 */
typedef struct MsScenario MsScenario;

typedef struct MsVehicleState {
  double x;
  double y;
  double v_x;
} MsVehicleState;

/**
 * One trace row. `action` is the action index in tie order
 * (maintain, accelerate, decelerate, steer left, steer right) or -1.
 */
typedef struct MsTraceRow {
  size_t step;
  double time;
  uint32_t vehicle_id;
  struct MsVehicleState state;
  int32_t action;
} MsTraceRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a
 * NUL-terminated string, truncating to `len - 1` bytes. Returns the full
 * message length in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ms_last_error_message(char *buf, size_t len);

/**
 * Parses and validates a scenario from JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum MsStatus ms_scenario_from_json(const char *json, struct MsScenario **out);

/**
 * Replaces the scenario seed.
 *
 * # Safety
 * `scenario` must come from [`ms_scenario_from_json`].
 */
enum MsStatus ms_scenario_set_seed(struct MsScenario *scenario, uint64_t seed);

/**
 * # Safety
 * `scenario` must be null or come from [`ms_scenario_from_json`], and is
 * invalid afterwards.
 */
void ms_scenario_free(struct MsScenario *scenario);

/**
 * Advances one state by one disturbance-free step under the scenario's road
 * and kinematics. `action` is an index in tie order.
 *
 * # Safety
 * `scenario` must be valid; `out` must be writable.
 */
enum MsStatus ms_step(const struct MsScenario *scenario,
                      struct MsVehicleState state,
                      int32_t action,
                      struct MsVehicleState *out);

/**
 * Runs the closed-loop simulation.
 *
 * # Safety
 * `scenario` must be valid; `out` must be writable.
 */
enum MsStatus ms_simulate(const struct MsScenario *scenario, struct MsOutcome **out);

/**
 * # Safety
 * `outcome` must be null or come from [`ms_simulate`], and is invalid
 * afterwards.
 */
void ms_outcome_free(struct MsOutcome *outcome);

/**
 * # Safety
 * `outcome` must be valid; `out` must be writable.
 */
enum MsStatus ms_outcome_verdict(const struct MsOutcome *outcome, enum MsVerdict *out);

/**
 * Merge completion time in seconds, NaN when the ego never merged.
 *
 * # Safety
 * `outcome` must be valid; `out` must be writable.
 */
enum MsStatus ms_outcome_merge_time(const struct MsOutcome *outcome, double *out);

/**
 * # Safety
 * `outcome` must be valid; `out` must be writable.
 */
enum MsStatus ms_outcome_steps(const struct MsOutcome *outcome, size_t *out);

/**
 * # Safety
 * `outcome` must be valid; `out` must be writable.
 */
enum MsStatus ms_outcome_trace_len(const struct MsOutcome *outcome, size_t *out);

/**
 * # Safety
 * `outcome` must be valid; `out` must be writable.
 */
enum MsStatus ms_outcome_trace_row(const struct MsOutcome *outcome,
                                   size_t index,
                                   struct MsTraceRow *out);

/**
 * Writes the trace CSV to `path`.
 *
 * # Safety
 * `outcome` must be valid; `path` must be a NUL-terminated string.
 */
enum MsStatus ms_outcome_write_trace_csv(const struct MsOutcome *outcome, const char *path);

/**
 * Final ego belief about `vehicle_id`.
 *
 * # Safety
 * `outcome` must be valid; `out` must be writable.
 */
enum MsStatus ms_outcome_belief(const struct MsOutcome *outcome,
                                uint32_t vehicle_id,
                                struct MsBelief **out);

/**
 * Uniform belief over the grid.
 *
 * # Safety
 * `out` must be writable.
 */
enum MsStatus ms_belief_uniform(struct MsBelief **out);

/**
 * # Safety
 * `belief` must be null or come from this library, and is invalid
 * afterwards.
 */
void ms_belief_free(struct MsBelief *belief);

/**
 * Number of intent cells.
 */
size_t ms_grid_size(void);

/**
 * Copies the cell probabilities into `buf`, which must hold at least
 * [`ms_grid_size`] values.
 *
 * # Safety
 * `belief` must be valid; `buf` must point to `len` writable doubles.
 */
enum MsStatus ms_belief_probabilities(const struct MsBelief *belief, double *buf, size_t len);

/**
 * # Safety
 * `belief` must be valid; `out` must be writable.
 */
enum MsStatus ms_belief_entropy(const struct MsBelief *belief, double *out);

/**
 * Index of the most probable cell.
 *
 * # Safety
 * `belief` must be valid; `out` must be writable.
 */
enum MsStatus ms_belief_map_index(const struct MsBelief *belief, size_t *out);

/**
 * Label of cell `index` such as `egoistic_001`, copied like
 * [`ms_last_error_message`]. `required` receives the full label length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes; `required` must be
 * null or writable.
 */
enum MsStatus ms_cell_label(size_t index, char *buf, size_t len, size_t *required);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MERGESIM_H */
