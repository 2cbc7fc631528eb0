/* C interface to gapdecomp: disparity-gap change estimation and decomposition. */

#ifndef GAPDECOMP_H
#define GAPDECOMP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define GAPDECOMP_OK 0

#define GAPDECOMP_CONFIG_ERROR 1

#define GAPDECOMP_DATA_ERROR 2

#define GAPDECOMP_ESTIMATION_ERROR 3

#define GAPDECOMP_VALIDATION_FAILED 4

#define GAPDECOMP_NULL_ARGUMENT -1

#define GAPDECOMP_INVALID_UTF8 -2

#define GAPDECOMP_PANIC -3

/**
 * An analysis report held behind the ABI; opaque to C callers.
 */
typedef struct GapdecompReport GapdecompReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gapdecomp_version(void);

/**
 * Message of the last error on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *gapdecomp_last_error(void);

/**
 * Run the analysis described by a TOML configuration string. On success,
 * `*out` owns a report handle.
 *
 * # Safety
 * `config_toml` must be a valid NUL-terminated string and `out` a valid
 * pointer to write one pointer through.
 */
int gapdecomp_run_config_str(const char *config_toml, struct GapdecompReport **out);

/**
 * As [`gapdecomp_run_config_str`], reading the configuration from a file.
 *
 * # Safety
 * `config_path` must be a valid NUL-terminated string and `out` a valid
 * pointer to write one pointer through.
 */
int gapdecomp_run_config_file(const char *config_path, struct GapdecompReport **out);

/**
 * Borrow the report's JSON; valid while the report handle lives.
 *
 * # Safety
 * `report` must be a live handle from a `gapdecomp_run_config_*` call.
 */
const char *gapdecomp_report_json(const struct GapdecompReport *report);

/**
 * Free a report handle. Null is allowed.
 *
 * # Safety
 * `report` must be null or a handle not yet freed.
 */
void gapdecomp_report_free(struct GapdecompReport *report);

/**
 * Generate a synthetic population from a TOML process definition, writing
 * the canonical CSV and the oracle truth JSON. `out_records` (optional)
 * receives the record count.
 *
 * # Safety
 * String arguments must be valid NUL-terminated strings; `out_records`
 * must be null or valid to write one u64 through.
 */
int gapdecomp_simulate(const char *dgp_toml,
                       const char *data_path,
                       const char *truth_path,
                       uint64_t *out_records);

/**
 * Validate the estimation pipeline against a TOML process definition.
 * `*out_summary_json` (optional) receives the check table as JSON (free
 * with [`gapdecomp_string_free`]). Returns 0 when all checks pass and 4
 * when the comparison fails.
 *
 * # Safety
 * `dgp_toml` must be a valid NUL-terminated string; `out_summary_json`
 * must be null or valid to write one pointer through.
 */
int gapdecomp_validate(const char *dgp_toml, char **out_summary_json);

/**
 * Free a string returned through an out-parameter. Null is allowed.
 *
 * # Safety
 * `s` must be null or a string produced by this library and not yet freed.
 */
void gapdecomp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAPDECOMP_H */
