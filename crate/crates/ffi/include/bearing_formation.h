#ifndef BEARING_FORMATION_H
#define BEARING_FORMATION_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of an FFI call.
typedef enum BfStatus {
  BF_STATUS_OK = 0,
  // Malformed scenario, bad override or failed validation.
  BF_STATUS_INPUT_ERROR = 2,
  // The leaders and bearings do not determine the followers.
  BF_STATUS_NON_UNIQUE_TARGET = 3,
  // The run stopped early; the partial result is still returned.
  BF_STATUS_ABORTED = 4,
  BF_STATUS_NULL_ARGUMENT = 5,
  BF_STATUS_INVALID_UTF8 = 6,
  BF_STATUS_IO_ERROR = 7,
  // The caller's buffer was too short; the required length was written.
  BF_STATUS_BUFFER_TOO_SMALL = 8,
  BF_STATUS_OUT_OF_RANGE = 9,
  BF_STATUS_PANIC = 10,
} BfStatus;

// Per-step scalar series stored in a result.
typedef enum BfSeries {
  BF_SERIES_TIME = 0,
  BF_SERIES_DELTA_P_NORM = 1,
  BF_SERIES_DELTA_V_NORM = 2,
  BF_SERIES_BEARING_ERROR = 3,
  BF_SERIES_MIN_DISTANCE = 4,
  BF_SERIES_MAX_CONTROL_INF = 5,
} BfSeries;

// Time series of one simulation.
typedef struct BfResult BfResult;

// Parsed scenario document plus any overrides applied so far.
typedef struct BfScenario BfScenario;

// Headline numbers of a run.
typedef struct BfSummary {
  size_t steps;
  double final_time;
  double final_delta_p;
  double final_delta_v;
  double final_bearing_error;
  double min_distance;
  double max_control_inf;
  // NaN when the threshold was never reached.
  double time_to_threshold;
  bool converged;
  bool aborted;
} BfSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Parses a scenario from a NUL-terminated JSON document.
//
// # Safety
// `json` must be a valid C string and `out` a writable pointer.
enum BfStatus bf_scenario_from_json(const char *json, struct BfScenario **out);

// Sets a dotted key, e.g. `controller.k_p`, to a JSON literal.
//
// # Safety
// `scenario` must come from [`bf_scenario_from_json`]; `key` and `value`
// must be valid C strings.
enum BfStatus bf_scenario_set(struct BfScenario *scenario, const char *key, const char *value);

// Releases a scenario. Null is ignored.
//
// # Safety
// `scenario` must come from [`bf_scenario_from_json`] and not be used again.
void bf_scenario_free(struct BfScenario *scenario);

// Writes the analysis report as JSON. Pass NaN for `gamma` to use the
// scenario's own value, if any.
//
// # Safety
// `scenario` must be a live handle and `out_json` writable.
enum BfStatus bf_analyze(const struct BfScenario *scenario, double gamma, char **out_json);

// Runs the closed loop. On [`BfStatus::Aborted`] the partial result is
// still stored in `out`.
//
// # Safety
// `scenario` must be a live handle and `out` writable.
enum BfStatus bf_simulate(const struct BfScenario *scenario, struct BfResult **out);

// Releases a result. Null is ignored.
//
// # Safety
// `result` must come from [`bf_simulate`] and not be used again.
void bf_result_free(struct BfResult *result);

// Number of stored steps, including the initial one. Zero for null.
//
// # Safety
// `result` must be null or a live handle.
size_t bf_result_len(const struct BfResult *result);

// Agent count, dimension and leader count.
//
// # Safety
// `result` must be a live handle; the out-pointers must be writable.
enum BfStatus bf_result_shape(const struct BfResult *result,
                              size_t *n,
                              size_t *d,
                              size_t *n_leaders);

// Fills `out` with the run's headline numbers.
//
// # Safety
// `result` must be a live handle and `out` writable.
enum BfStatus bf_result_summary(const struct BfResult *result, struct BfSummary *out);

// Copies one scalar series into `buf`. `written` receives the series length
// even when the buffer is too short, so a first call with `cap = 0` sizes it.
//
// # Safety
// `buf` must hold `cap` doubles; `written` must be writable.
enum BfStatus bf_result_series(const struct BfResult *result,
                               enum BfSeries series,
                               double *buf,
                               size_t cap,
                               size_t *written);

// Copies the stacked positions (`n * d` values, agents in order) at `step`.
//
// # Safety
// `buf` must hold `cap` doubles; `written` must be writable.
enum BfStatus bf_result_positions(const struct BfResult *result,
                                  size_t step,
                                  double *buf,
                                  size_t cap,
                                  size_t *written);

// Writes the per-step CSV to `path`.
//
// # Safety
// `result` must be a live handle and `path` a valid C string.
enum BfStatus bf_result_write_csv(const struct BfResult *result, const char *path);

// Serializes the full result as JSON.
//
// # Safety
// `result` must be a live handle and `out_json` writable.
enum BfStatus bf_result_to_json(const struct BfResult *result, char **out_json);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be used again.
void bf_string_free(char *s);

// Message for the last failed call on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *bf_last_error(void);

// Static name of a status, e.g. `"NON_UNIQUE_TARGET"`.
const char *bf_status_name(enum BfStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BEARING_FORMATION_H */
