#ifndef OTAC_H
#define OTAC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum OtacStatus {
  OTAC_STATUS_OK = 0,
  OTAC_STATUS_NULL_POINTER = 1,
  OTAC_STATUS_INVALID_UTF8 = 2,
  OTAC_STATUS_CONFIG = 3,
  OTAC_STATUS_IO = 4,
  OTAC_STATUS_INVALID_INPUT = 5,
  OTAC_STATUS_RUNTIME = 6,
  OTAC_STATUS_OUT_OF_RANGE = 7,
  OTAC_STATUS_PANIC = 8,
} OtacStatus;

/**
 * A parsed and validated run configuration.
 */
typedef struct OtacConfig OtacConfig;

/**
 * The outcome of [`otac_run`]: either per-scheme traces or a sweep table.
 */
typedef struct OtacResult OtacResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call into this library on the same thread.
 */
const char *otac_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *otac_version(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void otac_string_free(char *s);

/**
 * Parse a TOML run configuration held in memory.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum OtacStatus otac_config_from_toml(const char *toml, struct OtacConfig **out);

/**
 * Load a TOML run configuration from a file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum OtacStatus otac_config_load(const char *path, struct OtacConfig **out);

/**
 * Override the master seed.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum OtacStatus otac_config_set_seed(struct OtacConfig *config, uint64_t seed);

/**
 * Override the number of Monte-Carlo runs.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum OtacStatus otac_config_set_runs(struct OtacConfig *config, size_t runs);

/**
 * Fully resolved configuration as TOML.
 *
 * # Safety
 * `config` must be a live handle; `out` must be writable.
 */
enum OtacStatus otac_config_resolved_toml(const struct OtacConfig *config, char **out);

/**
 * Release a configuration. Null is ignored.
 *
 * # Safety
 * `config` must come from this library and not have been freed.
 */
void otac_config_free(struct OtacConfig *config);

/**
 * Run the configured experiment, or its sweep when one is configured.
 *
 * # Safety
 * `config` must be a live handle; `out` must be writable.
 */
enum OtacStatus otac_run(const struct OtacConfig *config, struct OtacResult **out);

/**
 * Whether the result holds a sweep table (1) or per-scheme traces (0).
 *
 * # Safety
 * `result` must be a live handle or null.
 */
int otac_result_is_sweep(const struct OtacResult *result);

/**
 * Number of schemes in the result.
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum OtacStatus otac_result_scheme_count(const struct OtacResult *result, size_t *out);

/**
 * Display name of scheme `index`, e.g. `OTA-C`.
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum OtacStatus otac_result_scheme_name(const struct OtacResult *result, size_t index, char **out);

/**
 * Final run-averaged NMSE in dB of scheme `index`.
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum OtacStatus otac_result_final_nmse_db(const struct OtacResult *result,
                                          size_t index,
                                          double *out);

/**
 * NMSE table as CSV: per-iteration traces, or the sweep table.
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum OtacStatus otac_result_csv(const struct OtacResult *result, char **out);

/**
 * Full metric trace of scheme `index` as CSV.
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum OtacStatus otac_result_metrics_csv(const struct OtacResult *result, size_t index, char **out);

/**
 * Release a result. Null is ignored.
 *
 * # Safety
 * `result` must come from this library and not have been freed.
 */
void otac_result_free(struct OtacResult *result);

/**
 * Run a verification suite by name. `samples == 0` selects the suite's
 * default. `passed` receives 1 or 0; `report`, when non-null, receives the
 * printable report.
 *
 * # Safety
 * `suite` must be a NUL-terminated string; `passed` must be writable;
 * `report` must be writable or null.
 */
enum OtacStatus otac_verify(const char *suite,
                            size_t samples,
                            int disconnected,
                            uint64_t seed,
                            int *passed,
                            char **report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OTAC_H */
