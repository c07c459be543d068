#ifndef MIXORDER_H
#define MIXORDER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define MO_VARIANT_SPLIT1 0

#define MO_VARIANT_SPLIT2 1

#define MO_VARIANT_SWAPPED 2

typedef enum MoStatus {
  MO_STATUS_OK = 0,
  MO_STATUS_NULL_POINTER = 1,
  MO_STATUS_INVALID_ARGUMENT = 2,
  MO_STATUS_PARSE_ERROR = 3,
  MO_STATUS_DATA_ERROR = 4,
  MO_STATUS_FIT_ERROR = 5,
  MO_STATUS_OVERLAP_ERROR = 6,
  MO_STATUS_IO_ERROR = 7,
  MO_STATUS_INTERNAL_ERROR = 8,
  MO_STATUS_PANIC = 9,
} MoStatus;

/**
 * Opaque dataset handle.
 */
typedef struct MoDataset MoDataset;

/**
 * Opaque result of a sequential testing run.
 */
typedef struct MoStpResult MoStpResult;

/**
 * Options for [`mo_run_stp`]. Obtain defaults from [`mo_stp_options_default`].
 */
typedef struct MoStpOptions {
  /**
   * One of the `MO_VARIANT_*` constants.
   */
  uint32_t variant;
  size_t l;
  /**
   * Fixed level, used when `kappa` is zero.
   */
  double alpha;
  /**
   * When positive, the level is `n1^(-kappa)`.
   */
  double kappa;
  size_t g_max;
  uint64_t seed;
  double n1_fraction;
  size_t restarts;
  double ridge;
} MoStpOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next `mo_*` call on the same thread.
 */
const char *mo_last_error_message(void);

struct MoStpOptions mo_stp_options_default(void);

/**
 * Copies `n * d` row-major values into a new dataset.
 */
enum MoStatus mo_dataset_new(const double *values, size_t n, size_t d, struct MoDataset **out);

/**
 * Reads a CSV file (UTF-8 path).
 */
enum MoStatus mo_dataset_from_csv(const char *path, struct MoDataset **out);

size_t mo_dataset_n(const struct MoDataset *ds);

size_t mo_dataset_d(const struct MoDataset *ds);

void mo_dataset_free(struct MoDataset *ds);

/**
 * Splits the data at random and runs the sequential tests. `options` may
 * be null for defaults.
 */
enum MoStatus mo_run_stp(const struct MoDataset *ds,
                         const struct MoStpOptions *options,
                         struct MoStpResult **out);

size_t mo_stp_result_g_hat(const struct MoStpResult *res);

double mo_stp_result_alpha(const struct MoStpResult *res);

bool mo_stp_result_hit_cap(const struct MoStpResult *res);

size_t mo_stp_result_trail_len(const struct MoStpResult *res);

/**
 * Reads trail entry `index`. Any output pointer may be null.
 */
enum MoStatus mo_stp_result_trail_get(const struct MoStpResult *res,
                                      size_t index,
                                      size_t *g,
                                      double *log_statistic,
                                      double *log_p);

/**
 * Serializes the result as JSON. Release the string with [`mo_string_free`].
 */
enum MoStatus mo_stp_result_to_json(const struct MoStpResult *res, char **out);

void mo_stp_result_free(struct MoStpResult *res);

void mo_string_free(char *s);

/**
 * Fits `g = 1..=g_max` on the full data. `aic` and `bic` must hold `g_max`
 * values each; failed fits are reported as NaN. The argmins are written to
 * `g_aic` and `g_bic` (0 when every fit failed).
 */
enum MoStatus mo_information_criteria(const struct MoDataset *ds,
                                      size_t g_max,
                                      uint64_t seed,
                                      double *aic,
                                      double *bic,
                                      size_t *g_aic,
                                      size_t *g_bic);

/**
 * p-value from a log statistic: `log p = min(-log V, 0)`.
 */
enum MoStatus mo_p_value(double log_statistic, double *p, double *log_p);

/**
 * Log of the mean of `m` e-values given by their logs.
 */
enum MoStatus mo_aggregate_e_values(const double *log_e_values, size_t m, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIXORDER_H */
