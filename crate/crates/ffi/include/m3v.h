#ifndef M3V_H
#define M3V_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum M3vStatus {
  M3V_STATUS_OK = 0,
  M3V_STATUS_NULL_POINTER = 1,
  M3V_STATUS_INVALID_UTF8 = 2,
  M3V_STATUS_IO = 3,
  M3V_STATUS_PARSE = 4,
  M3V_STATUS_INTEGRITY = 5,
  M3V_STATUS_INVALID_INPUT = 6,
  M3V_STATUS_NO_POLICY = 7,
  M3V_STATUS_INTERNAL = 8,
  M3V_STATUS_PANIC = 9,
} M3vStatus;

typedef enum M3vBranch {
  M3V_BRANCH_TEXT = 0,
  M3V_BRANCH_AUDIO = 1,
  M3V_BRANCH_MULTI = 2,
  M3V_BRANCH_FUSION = 3,
} M3vBranch;

/**
 * Opaque model handle.
 */
typedef struct M3vModel M3vModel;

/**
 * The four per-utterance scores, each in `[0, 1]`.
 */
typedef struct M3vScores {
  double align;
  double audio;
  double text;
  double multi;
} M3vScores;

typedef struct M3vDecision {
  /**
   * 1 for device-directed, 0 otherwise.
   */
  int32_t directed;
  enum M3vBranch branch;
  /**
   * SVM margin for the fusion policy; NaN for the branch policy.
   */
  double margin;
} M3vDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *m3v_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *m3v_last_error_message(void);

/**
 * Loads a checkpoint and, when `policy_path` is not null, a policy artifact.
 *
 * # Safety
 * Paths must be null or NUL-terminated strings; `out` must be writable.
 */
enum M3vStatus m3v_model_load(const char *checkpoint_path,
                              const char *policy_path,
                              struct M3vModel **out);

/**
 * Releases a handle from [`m3v_model_load`]. Null is ignored.
 *
 * # Safety
 * `model` must be null or a live handle not freed before.
 */
void m3v_model_free(struct M3vModel *model);

/**
 * Scores one utterance given as row-major feature matrices.
 *
 * # Safety
 * `audio` must hold `n_frames * audio_dim` values and `text` must hold
 * `n_tokens * text_dim`; `model` must be a live handle.
 */
enum M3vStatus m3v_model_score(const struct M3vModel *model,
                               const double *audio,
                               size_t n_frames,
                               size_t audio_dim,
                               const double *text,
                               size_t n_tokens,
                               size_t text_dim,
                               struct M3vScores *out);

/**
 * Scores one utterance given as a JSONL record.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `model` must be a live handle.
 */
enum M3vStatus m3v_model_score_json(const struct M3vModel *model,
                                    const char *json,
                                    struct M3vScores *out);

/**
 * Applies both policies of the loaded artifact. Either output may be null.
 *
 * # Safety
 * `model` must be a live handle; non-null outputs must be writable.
 */
enum M3vStatus m3v_model_decide(const struct M3vModel *model,
                                const struct M3vScores *scores,
                                struct M3vDecision *out_policy1,
                                struct M3vDecision *out_policy2);

/**
 * Equal error rate of `n` scores against 0/1 labels (nonzero = positive).
 *
 * # Safety
 * `scores` and `labels` must each hold `n` values; `out` must be writable.
 */
enum M3vStatus m3v_eer(const double *scores, const uint8_t *labels, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* M3V_H */
