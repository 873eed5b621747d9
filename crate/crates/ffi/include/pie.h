#ifndef PIE_H
#define PIE_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PieStatus {
  PIE_STATUS_OK = 0,
  /**
   * A null pointer, bad UTF-8 or an out-of-range argument.
   */
  PIE_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Input data or a file the library could not use.
   */
  PIE_STATUS_DATA_ERROR = 2,
  /**
   * Non-finite values during a numeric computation.
   */
  PIE_STATUS_DIVERGENCE = 3,
  /**
   * A bug inside the library; the message has details.
   */
  PIE_STATUS_INTERNAL = 4,
} PieStatus;

/**
 * A trained model loaded from a checkpoint.
 */
typedef struct PieModelHandle PieModelHandle;

/**
 * Token granularity: 0 for words, 1 for characters.
 */
typedef int32_t PieMode;

#define PIE_MODE_WORD 0

#define PIE_MODE_CHAR 1

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *pie_last_error(void);

/**
 * Library version as a static string.
 */
const char *pie_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void pie_string_free(char *s);

/**
 * Minimum alignment cost between two lines.
 *
 * # Safety
 * `src` and `tgt` must be NUL-terminated; `out_cost` must be writable.
 */
enum PieStatus pie_diff_cost(const char *src, const char *tgt, PieMode mode, double *out_cost);

/**
 * Compiles a pair into edits, written as one JSON edit record.
 * `inserts_tsv` is the text of an insert dictionary file.
 *
 * # Safety
 * All strings must be NUL-terminated; `out_json` must be writable.
 */
enum PieStatus pie_seq2edits(const char *src,
                             const char *tgt,
                             const char *inserts_tsv,
                             PieMode mode,
                             char **out_json);

/**
 * Applies a JSON edit record to a line and writes the result.
 *
 * # Safety
 * All strings must be NUL-terminated; `out_line` must be writable.
 */
enum PieStatus pie_apply_edits(const char *src,
                               const char *edits_json,
                               PieMode mode,
                               char **out_line);

/**
 * Fraction of `n` predictions equal to their references.
 *
 * # Safety
 * `pred` and `gold` must each point to `n` NUL-terminated strings.
 */
enum PieStatus pie_word_accuracy(const char *const *pred,
                                 const char *const *gold,
                                 uintptr_t n,
                                 double *out_accuracy);

/**
 * Loads a checkpoint written by the trainer.
 *
 * # Safety
 * `path` must be NUL-terminated; `out_model` must be writable.
 */
enum PieStatus pie_model_load(const char *path, struct PieModelHandle **out_model);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`pie_model_load`] and not have been freed.
 */
void pie_model_free(struct PieModelHandle *model);

/**
 * Corrects one line with up to `max_iterations` refinement rounds.
 *
 * # Safety
 * `model` must be a live handle, `line` NUL-terminated and `out_line` writable.
 */
enum PieStatus pie_model_predict(const struct PieModelHandle *model,
                                 const char *line,
                                 uint32_t max_iterations,
                                 char **out_line);

/**
 * Sentences encoded by this model so far.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint64_t pie_model_forward_passes(const struct PieModelHandle *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PIE_H */
