#ifndef STEIN_FCLT_H
#define STEIN_FCLT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_NULL_POINTER = 1,
  SF_STATUS_INVALID_ARGUMENT = 2,
  SF_STATUS_CONFIG = 3,
  SF_STATUS_NUMERICAL = 4,
  /**
   * A verify experiment ran and found a violated check.
   */
  SF_STATUS_VIOLATION = 5,
  SF_STATUS_BUFFER_TOO_SMALL = 6,
  SF_STATUS_PANIC = 7,
} SfStatus;

/**
 * Random-graph model handle.
 */
typedef struct SfGraph SfGraph;

/**
 * Step path handle: `(grid + 1) x dim` values, row-major.
 */
typedef struct SfPath SfPath;

/**
 * Run-count model handle.
 */
typedef struct SfRuns SfRuns;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; valid until the next call.
 */
const char *sf_last_error(void);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum SfStatus sf_graph_new(size_t n, double p, struct SfGraph **out);

/**
 * # Safety
 * `g` must come from [`sf_graph_new`] or be null.
 */
void sf_graph_free(struct SfGraph *g);

/**
 * Centered edge and two-star path from replication `rep` of `seed`.
 *
 * # Safety
 * `g` must be a live handle and `out` a valid pointer.
 */
enum SfStatus sf_graph_simulate(const struct SfGraph *g,
                                uint64_t seed,
                                uint64_t rep,
                                struct SfPath **out);

/**
 * Pre-limit and limit bounds per unit norm.
 *
 * # Safety
 * `pre` and `con` must be valid pointers.
 */
enum SfStatus sf_graph_bounds(size_t n, double *pre, double *con);

/**
 * # Safety
 * `rs` must point to `len` values; `out` must be valid.
 */
enum SfStatus sf_runs_new(size_t n, double p, const size_t *rs, size_t len, struct SfRuns **out);

/**
 * # Safety
 * `r` must come from [`sf_runs_new`] or be null.
 */
void sf_runs_free(struct SfRuns *r);

/**
 * # Safety
 * `r` must be a live handle and `out` a valid pointer.
 */
enum SfStatus sf_runs_simulate(const struct SfRuns *r,
                               uint64_t seed,
                               uint64_t rep,
                               struct SfPath **out);

/**
 * Totals of the pre-limit and limit bounds per unit `M^0` norm.
 *
 * # Safety
 * `r` must be a live handle; `pre` and `con` valid pointers.
 */
enum SfStatus sf_runs_bounds(const struct SfRuns *r, double *pre, double *con);

/**
 * # Safety
 * `path` must be a live handle.
 */
size_t sf_path_dim(const struct SfPath *path);

/**
 * # Safety
 * `path` must be a live handle.
 */
size_t sf_path_grid(const struct SfPath *path);

/**
 * # Safety
 * `path` must be a live handle.
 */
double sf_path_sup_norm(const struct SfPath *path);

/**
 * Copy all `(grid + 1) * dim` values into `buf`.
 *
 * # Safety
 * `path` must be a live handle; `buf` must hold `len` doubles.
 */
enum SfStatus sf_path_values(const struct SfPath *path, double *buf, size_t len);

/**
 * # Safety
 * `path` must come from this library or be null.
 */
void sf_path_free(struct SfPath *path);

/**
 * Run a JSON experiment config. On `SF_STATUS_OK` or `SF_STATUS_VIOLATION`
 * `*report` receives the JSON report without timing metadata; free it with
 * [`sf_string_free`]. `threads = 0` uses the default pool.
 *
 * # Safety
 * `config` must be a NUL-terminated string; `report` a valid pointer.
 */
enum SfStatus sf_run_config(const char *config, size_t threads, char **report);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void sf_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEIN_FCLT_H */
