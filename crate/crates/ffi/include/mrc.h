#ifndef MRC_H
#define MRC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum mrc_status {
  MRC_STATUS_OK = 0,
  MRC_STATUS_NULL_POINTER = 1,
  MRC_STATUS_INVALID_UTF8 = 2,
  MRC_STATUS_IO = 3,
  MRC_STATUS_INVALID = 4,
  MRC_STATUS_CHECKPOINT = 5,
  MRC_STATUS_BUFFER_TOO_SMALL = 6,
  MRC_STATUS_PANIC = 7,
} mrc_status;

/**
 * A loaded checkpoint. Opaque to C.
 */
typedef struct mrc_model mrc_model;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *mrc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mrc_version(void);

/**
 * Loads a checkpoint file into `*out`.
 *
 * # Safety
 * `path` is a NUL-terminated string and `out` points to writable storage.
 */
enum mrc_status mrc_model_load(const char *path, struct mrc_model **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` is null or was returned by `mrc_model_load` and not yet freed.
 */
void mrc_model_free(struct mrc_model *model);

/**
 * The order scheme the model was trained with, e.g. `dq_o`. Free the
 * result with `mrc_string_free`.
 *
 * # Safety
 * `model` is a live model and `out` points to writable storage.
 */
enum mrc_status mrc_model_scheme(const struct mrc_model *model, char **out);

/**
 * Scores `n_options` options for one question under the model's own
 * scheme, writing one score per option to `scores`. Higher is better; for
 * sigmoid models a score of at least zero means "correct".
 *
 * # Safety
 * All strings are NUL-terminated; `options` holds `n_options` strings and
 * `scores` has room for `n_options` doubles.
 */
enum mrc_status mrc_model_score(const struct mrc_model *model,
                                const char *document,
                                const char *question,
                                const char *const *options,
                                size_t n_options,
                                double *scores);

/**
 * Highlight bits of the tokenized document for one question and option,
 * one byte (0 or 1) per document token, using the bundled tagger. The
 * token count is stored in `*len` even when `capacity` is too small.
 *
 * # Safety
 * Strings are NUL-terminated; `bits` has room for `capacity` bytes (it may
 * be null when `capacity` is 0) and `len` points to writable storage.
 */
enum mrc_status mrc_highlight_mask(const char *document,
                                   const char *question,
                                   const char *option,
                                   uint8_t *bits,
                                   size_t capacity,
                                   size_t *len);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` is null or was returned by this library and not yet freed.
 */
void mrc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MRC_H */
