#ifndef AUDIOREC_H
#define AUDIOREC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ArStatus {
  AR_STATUS_OK = 0,
  AR_STATUS_NULL_POINTER = 1,
  AR_STATUS_INVALID_UTF8 = 2,
  AR_STATUS_IO = 3,
  /**
   * Malformed file contents or unparseable values.
   */
  AR_STATUS_FORMAT = 4,
  AR_STATUS_INVALID_INPUT = 5,
  AR_STATUS_CONFIG = 6,
  AR_STATUS_UNKNOWN_ID = 7,
  AR_STATUS_DIVERGED = 8,
  /**
   * Some (model, variant) pairs of a run failed.
   */
  AR_STATUS_PARTIAL_FAILURE = 9,
  /**
   * Every pair of a run failed.
   */
  AR_STATUS_RUN_FAILED = 10,
  AR_STATUS_PANIC = 11,
} ArStatus;

/**
 * Opaque item embedding table.
 */
typedef struct ArEmbeddings ArEmbeddings;

/**
 * Opaque run configuration.
 */
typedef struct ArRunConfig ArRunConfig;

/**
 * Per-user ranking metrics at a cutoff K.
 */
typedef struct ArMetrics {
  double hitrate;
  double recall;
  double ndcg;
  double mrr;
  double precision;
} ArMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next call into this library on the same thread.
 */
const char *ar_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ar_version(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void ar_string_free(char *s);

/**
 * Loads a PARE or CSV embedding table.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ArStatus ar_embeddings_load(const char *path, struct ArEmbeddings **out);

/**
 * Number of items, 0 for NULL.
 *
 * # Safety
 * `h` must be NULL or a live handle.
 */
size_t ar_embeddings_n_items(const struct ArEmbeddings *h);

/**
 * Vector width, 0 for NULL.
 *
 * # Safety
 * `h` must be NULL or a live handle.
 */
size_t ar_embeddings_dim(const struct ArEmbeddings *h);

/**
 * Copies the vector of `item_id` into `out`, which holds `len` floats
 * (at least the table dim).
 *
 * # Safety
 * `h` must be a live handle, `item_id` NUL-terminated, `out` writable for `len` floats.
 */
enum ArStatus ar_embeddings_row(const struct ArEmbeddings *h,
                                const char *item_id,
                                float *out,
                                size_t len);

/**
 * # Safety
 * `h` must be NULL or a handle not yet freed.
 */
void ar_embeddings_free(struct ArEmbeddings *h);

/**
 * Mean-pools `n_chunks` row-major chunk vectors of width `dim` into `out`
 * (`dim` floats).
 *
 * # Safety
 * `chunks` must hold `n_chunks * dim` floats and `out` `dim` floats.
 */
enum ArStatus ar_pool_chunks(const float *chunks, size_t n_chunks, size_t dim, float *out);

/**
 * Metrics of one ranked list (item indices, best first) against the
 * relevant set.
 *
 * # Safety
 * Arrays must hold the stated number of elements; `out` must be writable.
 */
enum ArStatus ar_metrics_at_k(const uint32_t *ranking,
                              size_t n_ranking,
                              const uint32_t *relevant,
                              size_t n_relevant,
                              size_t k,
                              struct ArMetrics *out);

/**
 * Two-sided paired bootstrap p-value for the mean difference of `a` and `b`.
 *
 * # Safety
 * `a` and `b` must hold `n` doubles; `p_value` must be writable.
 */
enum ArStatus ar_bootstrap_significance(const double *a,
                                        const double *b,
                                        size_t n,
                                        size_t resamples,
                                        uint64_t seed,
                                        double *p_value);

/**
 * Parses and validates a JSON run config file. Relative paths resolve
 * against its directory.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum ArStatus ar_config_load(const char *path, struct ArRunConfig **out);

/**
 * Overrides the master seed.
 *
 * # Safety
 * `h` must be a live handle.
 */
enum ArStatus ar_config_set_seed(struct ArRunConfig *h, uint64_t seed);

/**
 * Overrides the output directory.
 *
 * # Safety
 * `h` must be a live handle and `dir` NUL-terminated.
 */
enum ArStatus ar_config_set_output_dir(struct ArRunConfig *h, const char *dir);

/**
 * # Safety
 * `h` must be NULL or a handle not yet freed.
 */
void ar_config_free(struct ArRunConfig *h);

/**
 * Runs every (model, variant) pair and writes the artifacts. Returns
 * `AR_STATUS_PARTIAL_FAILURE` or `AR_STATUS_RUN_FAILED` when pairs failed;
 * the run directory is written in both cases.
 *
 * # Safety
 * `h` must be a live handle.
 */
enum ArStatus ar_run(const struct ArRunConfig *h);

/**
 * Renders the comparison table of a run directory, as text or CSV.
 *
 * # Safety
 * `run_dir` must be NUL-terminated; `out` must be writable. Free the result
 * with [`ar_string_free`].
 */
enum ArStatus ar_render_report(const char *run_dir, bool csv, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUDIOREC_H */
