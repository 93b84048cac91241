/* C interface to the blendstat sample-blending library. */

#ifndef BLENDSTAT_H
#define BLENDSTAT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status of a call. Anything but `OK` leaves a message for
 * [`bs_last_error`].
 */
typedef enum BsStatus {
  /**
   * The call succeeded.
   */
  BS_STATUS_OK = 0,
  /**
   * A pointer was null, a string was not UTF-8, a buffer was too small,
   * or an argument was otherwise unusable.
   */
  BS_STATUS_INVALID_ARGUMENT = 1,
  /**
   * The requested configuration is inconsistent.
   */
  BS_STATUS_CONFIG = 2,
  /**
   * The data could not be read or failed validation.
   */
  BS_STATUS_DATA = 3,
  /**
   * A model fit failed.
   */
  BS_STATUS_FIT = 4,
  /**
   * The sample-membership probabilities could not be assembled.
   */
  BS_STATUS_PROPENSITY = 5,
  /**
   * Calibration (raking) failed or did not converge.
   */
  BS_STATUS_RAKING = 6,
  /**
   * The operation does not apply to the requested weighting scheme.
   */
  BS_STATUS_SCHEME = 7,
  /**
   * A variance computation failed.
   */
  BS_STATUS_VARIANCE = 8,
  /**
   * A replication (jackknife) computation failed.
   */
  BS_STATUS_REPLICATION = 9,
  /**
   * The library panicked; the handle states are unspecified.
   */
  BS_STATUS_PANIC = 10,
} BsStatus;

/**
 * A loaded pooled sample (probability plus convenience units).
 */
typedef struct BsDataset BsDataset;

/**
 * Computed blending weights together with the recipe that produced them.
 * The recipe is kept so that estimation can refit everything per jackknife
 * replicate.
 */
typedef struct BsWeights BsWeights;

/**
 * Summary of a computed weight set.
 */
typedef struct BsWeightsSummary {
  /**
   * Number of weights (equals the data set's unit count).
   */
  size_t n;
  /**
   * Kish design effect `n Σw² / (Σw)²`.
   */
  double deff;
  /**
   * Blending coefficient for disjoint schemes; NaN for simultaneous ones.
   */
  double kappa;
  /**
   * Symmetric trimming fraction that was applied.
   */
  double trim_pct;
  /**
   * Weights pulled to a trimming bound.
   */
  size_t n_trimmed;
} BsWeightsSummary;

/**
 * A weighted mean with its uncertainty.
 */
typedef struct BsEstimate {
  double estimate;
  double se;
  double ci_low;
  double ci_high;
  /**
   * Kish design effect of the weights over the units used.
   */
  double deff;
  /**
   * Units with an observed outcome.
   */
  size_t n_used;
} BsEstimate;

/**
 * Result of the blending-adequacy test: the convenience-minus-probability
 * difference of weighted outcome means and its significance.
 */
typedef struct BsAdequacy {
  double delta;
  double se;
  double z;
  double p_value;
  double mean_prob;
  double mean_conv;
} BsAdequacy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The library version as a static NUL-terminated string.
 */
const char *bs_version(void);

/**
 * The message of the most recent failure on this thread, or an empty
 * string. The pointer stays valid until the next failing `bs_*` call on
 * the same thread; do not free it.
 */
const char *bs_last_error(void);

/**
 * Load a pooled sample from a CSV file.
 *
 * The file must carry `id`, `sample` (`prob`/`conv`) and `d_star` columns,
 * the named auxiliary columns (numeric, complete) and the named outcome
 * columns (numeric, empty cells allowed). On success `*out` receives a
 * handle owned by the caller; release it with [`bs_dataset_free`].
 *
 * # Safety
 * `path`, the two string arrays and `out` must be valid pointers as
 * described; string arrays must hold `n_auxiliaries` / `n_outcomes`
 * entries.
 */
enum BsStatus bs_dataset_load_csv(const char *path,
                                  const char *const *auxiliaries,
                                  size_t n_auxiliaries,
                                  const char *const *outcomes,
                                  size_t n_outcomes,
                                  struct BsDataset **out);

/**
 * Release a data-set handle. Null is allowed.
 *
 * # Safety
 * `ds` must be a handle from [`bs_dataset_load_csv`] not yet freed.
 */
void bs_dataset_free(struct BsDataset *ds);

/**
 * Total number of units; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t bs_dataset_total(const struct BsDataset *ds);

/**
 * Number of probability-sample units; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t bs_dataset_probability(const struct BsDataset *ds);

/**
 * Number of convenience-sample units; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t bs_dataset_convenience(const struct BsDataset *ds);

/**
 * Compute blending weights.
 *
 * `scheme` is one of `"sps"`, `"dps"`, `"sc"`, `"dc"`. `kappa` fixes the
 * blending coefficient for the disjoint schemes; pass NaN for the
 * precision-optimal coefficient. `trim_pct` is the symmetric trimming
 * fraction in `[0, 0.5)` (0 disables trimming). The membership model and
 * any calibration use every auxiliary column of the data set; calibration
 * benchmarks are estimated from the probability sample. On success `*out`
 * receives a handle owned by the caller; release it with
 * [`bs_weights_free`].
 *
 * # Safety
 * `ds` must be a live data-set handle; `scheme` a valid C string; `out` a
 * valid pointer.
 */
enum BsStatus bs_weights_compute(const struct BsDataset *ds,
                                 const char *scheme,
                                 double kappa,
                                 double trim_pct,
                                 struct BsWeights **out);

/**
 * Release a weights handle. Null is allowed.
 *
 * # Safety
 * `w` must be a handle from [`bs_weights_compute`] not yet freed.
 */
void bs_weights_free(struct BsWeights *w);

/**
 * Number of weights; 0 for a null handle.
 *
 * # Safety
 * `w` must be null or a live handle.
 */
size_t bs_weights_len(const struct BsWeights *w);

/**
 * Copy the weights, in data-set unit order, into `buffer`.
 *
 * # Safety
 * `w` must be a live handle and `buffer` must have room for `capacity`
 * doubles; `capacity` must be at least [`bs_weights_len`].
 */
enum BsStatus bs_weights_copy(const struct BsWeights *w, double *buffer, size_t capacity);

/**
 * Fill `out` with a summary of the weight set.
 *
 * # Safety
 * `w` must be a live handle and `out` a valid pointer.
 */
enum BsStatus bs_weights_summary(const struct BsWeights *w, struct BsWeightsSummary *out);

/**
 * Estimate the weighted population mean of `outcome`.
 *
 * With `jackknife` false the standard error is by Taylor linearization
 * (`groups` and `seed` are ignored); with it true a delete-a-group
 * jackknife refits the entire weighting pipeline on each of `groups`
 * replicates, with replicate groups assigned by `seed`. `alpha` sets the
 * two-sided confidence level to `1 − alpha`. The weights handle supplies
 * the weighting recipe and must come from the same data set.
 *
 * # Safety
 * `ds` and `w` must be live handles; `outcome` a valid C string; `out` a
 * valid pointer.
 */
enum BsStatus bs_estimate_mean(const struct BsDataset *ds,
                               const struct BsWeights *w,
                               const char *outcome,
                               bool jackknife,
                               size_t groups,
                               uint64_t seed,
                               double alpha,
                               struct BsEstimate *out);

/**
 * Test whether the two samples agree on `outcome` under the handle's
 * weights. Only disjoint schemes (`dps`, `dc`) are accepted: simultaneous
 * weights do not keep the two samples separately representative, which is
 * what the test needs.
 *
 * # Safety
 * `ds` and `w` must be live handles; `outcome` a valid C string; `out` a
 * valid pointer.
 */
enum BsStatus bs_adequacy(const struct BsDataset *ds,
                          const struct BsWeights *w,
                          const char *outcome,
                          struct BsAdequacy *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BLENDSTAT_H */
