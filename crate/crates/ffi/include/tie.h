#ifndef TIE_H
#define TIE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TieStatus {
  TIE_STATUS_OK = 0,
  TIE_STATUS_NULL_ARGUMENT = 1,
  TIE_STATUS_INVALID_UTF8 = 2,
  TIE_STATUS_PARSE = 3,
  TIE_STATUS_IO = 4,
  TIE_STATUS_FORMAT = 5,
  TIE_STATUS_MODEL = 6,
  TIE_STATUS_INVALID_ARGUMENT = 7,
  TIE_STATUS_BUFFER_TOO_SMALL = 8,
  TIE_STATUS_PANIC = 9,
} TieStatus;

/**
 * A parsed page with its node boxes.
 */
typedef struct TieDocument TieDocument;

/**
 * A trained or freshly initialized node locator with its span scorer.
 */
typedef struct TieModel TieModel;

/**
 * Result of [`tie_answer`]. `text` is owned by the caller and released
 * with [`tie_answer_free_text`].
 */
typedef struct TieAnswer {
  size_t node_id;
  double node_prob;
  /**
   * Inclusive token range of the answer.
   */
  size_t token_start;
  size_t token_end;
  /**
   * The answer did not come from the top node.
   */
  bool fallback_used;
  char *text;
} TieAnswer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Failure message of the most recent fallible call on this thread; empty
 * after a success. The pointer stays valid until the next call on the
 * same thread.
 */
const char *tie_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tie_version(void);

/**
 * Model with seeded random parameters, the default head assignment and
 * default training settings.
 *
 * # Safety
 * `out` must be null or point to writable storage for one pointer.
 */
enum TieStatus tie_model_new(size_t dim,
                             size_t heads,
                             size_t layers,
                             uint64_t seed,
                             struct TieModel **out);

/**
 * Load a parameter file and its configuration sidecar. `qa_path` may be
 * null for the untrained span scorer.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be null or
 * writable.
 */
enum TieStatus tie_model_load(const char *path, const char *qa_path, struct TieModel **out);

/**
 * Write the parameters to `path` and the configuration to `path.json`.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum TieStatus tie_model_save(const struct TieModel *model, const char *path);

/**
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void tie_model_free(struct TieModel *model);

/**
 * Parse a page. `boxes_json` may be null, or a JSON object mapping
 * pre-order node ids to `[x, y, w, h]`.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be null or
 * writable.
 */
enum TieStatus tie_document_parse(const char *html,
                                  const char *boxes_json,
                                  struct TieDocument **out);

/**
 * Number of DOM nodes, or 0 for a null handle.
 *
 * # Safety
 * `doc` must be null or a live handle from this library.
 */
size_t tie_document_node_count(const struct TieDocument *doc);

/**
 * Number of tokens, or 0 for a null handle.
 *
 * # Safety
 * `doc` must be null or a live handle from this library.
 */
size_t tie_document_token_count(const struct TieDocument *doc);

/**
 * # Safety
 * `doc` must be null or a handle from this library not yet freed.
 */
void tie_document_free(struct TieDocument *doc);

/**
 * Answer-node probabilities. When `capacity` is smaller than the node
 * count nothing is written, `count` still receives the node count and
 * the call returns `TIE_STATUS_BUFFER_TOO_SMALL`.
 *
 * # Safety
 * Handles must be live; `question` NUL-terminated; `probs` valid for
 * `capacity` doubles (or null when `capacity` is 0); `count` writable.
 */
enum TieStatus tie_node_probabilities(const struct TieModel *model,
                                      const struct TieDocument *doc,
                                      const char *question,
                                      double *probs,
                                      size_t capacity,
                                      size_t *count);

/**
 * Locate the answer node, then the answer span inside it.
 *
 * # Safety
 * Handles must be live; `question` NUL-terminated; `out` writable.
 */
enum TieStatus tie_answer(const struct TieModel *model,
                          const struct TieDocument *doc,
                          const char *question,
                          struct TieAnswer *out);

/**
 * Release the text of an answer and reset it to null.
 *
 * # Safety
 * `answer` must be null or point to an answer filled by [`tie_answer`].
 */
void tie_answer_free_text(struct TieAnswer *answer);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TIE_H */
