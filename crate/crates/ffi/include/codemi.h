#ifndef CODEMI_H
#define CODEMI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Observation level of an oracle handle.
 */
typedef enum CodemiAccess {
  CODEMI_ACCESS_WHITE = 0,
  CODEMI_ACCESS_GRAY = 1,
  CODEMI_ACCESS_BLACK = 2,
} CodemiAccess;

/**
 * Attack setting, which decides how the threshold is picked.
 */
typedef enum CodemiSetting {
  CODEMI_SETTING_WHITEBOX = 0,
  CODEMI_SETTING_GRAYBOX = 1,
  CODEMI_SETTING_BLACKBOX = 2,
} CodemiSetting;

/**
 * Result code of every fallible call.
 */
typedef enum CodemiStatus {
  CODEMI_STATUS_OK = 0,
  CODEMI_STATUS_NULL_POINTER = 1,
  CODEMI_STATUS_INVALID_UTF8 = 2,
  CODEMI_STATUS_INVALID_ARGUMENT = 3,
  CODEMI_STATUS_IO = 4,
  CODEMI_STATUS_CONFIG = 5,
  CODEMI_STATUS_ACCESS = 6,
  CODEMI_STATUS_INPUT = 7,
  CODEMI_STATUS_METRIC = 8,
  CODEMI_STATUS_MODE = 9,
  CODEMI_STATUS_CHECKPOINT = 10,
  CODEMI_STATUS_OTHER = 11,
  CODEMI_STATUS_PANIC = 12,
} CodemiStatus;

/**
 * Opaque calibration model.
 */
typedef struct CodemiCalibration CodemiCalibration;

/**
 * Opaque encoder oracle.
 */
typedef struct CodemiOracle CodemiOracle;

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *codemi_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *codemi_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from a codemi function documented to return an owned string.
 */
void codemi_string_free(char *s);

/**
 * Loads a target checkpoint directory as an oracle at `level`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CodemiStatus codemi_oracle_load(const char *dir,
                                     enum CodemiAccess level,
                                     struct CodemiOracle **out);

/**
 * A new handle on the same encoder at a lower or equal access level.
 *
 * # Safety
 * `oracle` must be a live handle and `out` a valid pointer.
 */
enum CodemiStatus codemi_oracle_restrict(const struct CodemiOracle *oracle,
                                         enum CodemiAccess level,
                                         struct CodemiOracle **out);

/**
 * # Safety
 * `oracle` must be null or a handle not freed before.
 */
void codemi_oracle_free(struct CodemiOracle *oracle);

/**
 * Width of the oracle's output vectors, or 0 for a null handle.
 *
 * # Safety
 * `oracle` must be null or a live handle.
 */
size_t codemi_oracle_hidden_dim(const struct CodemiOracle *oracle);

/**
 * Number of encoder layers, or 0 for a null handle.
 *
 * # Safety
 * `oracle` must be null or a live handle.
 */
size_t codemi_oracle_num_layers(const struct CodemiOracle *oracle);

/**
 * Final-layer [CLS] vector of `text`; `out` must hold `len` floats and `len`
 * must equal the hidden width.
 *
 * # Safety
 * `oracle` must be a live handle, `text` NUL-terminated, `out` writable for `len` floats.
 */
enum CodemiStatus codemi_oracle_cls(const struct CodemiOracle *oracle,
                                    const char *text,
                                    float *out,
                                    size_t len);

/**
 * Loads a calibration model directory.
 *
 * # Safety
 * `dir` must be NUL-terminated and `out` a valid pointer.
 */
enum CodemiStatus codemi_calibration_load(const char *dir, struct CodemiCalibration **out);

/**
 * # Safety
 * `calib` must be null or a handle not freed before.
 */
void codemi_calibration_free(struct CodemiCalibration *calib);

/**
 * Raw unimodal score of `code` (larger is more member-like).
 *
 * # Safety
 * Handles must be live, `code` NUL-terminated, `out` valid.
 */
enum CodemiStatus codemi_unimodal_score(const struct CodemiOracle *oracle,
                                        const struct CodemiCalibration *calib,
                                        const char *code,
                                        double *out);

/**
 * Raw bimodal score of a code/description pair (smaller is more member-like).
 *
 * # Safety
 * Handles must be live, `code` and `nl` NUL-terminated, `out` valid.
 */
enum CodemiStatus codemi_bimodal_score(const struct CodemiOracle *oracle,
                                       const struct CodemiCalibration *calib,
                                       const char *code,
                                       const char *nl,
                                       double *out);

/**
 * Unimodal score from four precomputed `dim`-wide vectors.
 *
 * # Safety
 * Every vector pointer must be readable for `dim` floats; `out` valid.
 */
enum CodemiStatus codemi_s_uni(const float *h_lower,
                               const float *h_upper,
                               const float *c_lower,
                               const float *c_upper,
                               size_t dim,
                               double *out);

/**
 * Bimodal score from four precomputed `dim`-wide vectors.
 *
 * # Safety
 * Every vector pointer must be readable for `dim` floats; `out` valid.
 */
enum CodemiStatus codemi_s_bi(const float *h_code,
                              const float *r_nl,
                              const float *c_code,
                              const float *c_nl,
                              size_t dim,
                              double *out);

/**
 * Ranking AUC of `n` scores with 0/1 labels (1 = member); ties count half.
 *
 * # Safety
 * `scores` and `labels` must be readable for `n` elements; `out` valid.
 */
enum CodemiStatus codemi_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Validation-rank threshold: rank `ceil(k·n)` among member scores for the
 * white and gray settings, `ceil(g·n)` among nonmember scores for black box.
 * Ties among scores are broken by position.
 *
 * # Safety
 * `scores` and `labels` must be readable for `n` elements; `out` valid.
 */
enum CodemiStatus codemi_select_threshold(const double *scores,
                                          const uint8_t *labels,
                                          size_t n,
                                          enum CodemiSetting setting,
                                          double k,
                                          double g,
                                          double *out);

/**
 * JSON summary of an oracle (level, depth, width, vocabulary). Free the
 * result with [`codemi_string_free`]; null on failure.
 *
 * # Safety
 * `oracle` must be null or a live handle.
 */
char *codemi_oracle_describe(const struct CodemiOracle *oracle);

#endif  /* CODEMI_H */
