#ifndef SSTUNE_H
#define SSTUNE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Error codes returned by every fallible function.
 */
typedef enum SstuneStatus {
  SstuneOk = 0,
  SstuneNullArgument = 1,
  SstuneInvalidUtf8 = 2,
  SstuneIoOrFormat = 3,
  SstuneInvalidInput = 4,
} SstuneStatus;

/**
 * Opaque backoff language model handle.
 */
typedef struct SstuneLm SstuneLm;

/**
 * Opaque acoustic model handle.
 */
typedef struct SstuneModel SstuneModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message for this thread into `buf` (NUL-terminated,
 * truncated to `cap` bytes). Returns the full message length in bytes,
 * or 0 if there is no pending error. Safe to call with a null buffer to
 * query the length.
 */
uintptr_t sstune_last_error(char *buf, uintptr_t cap);

/**
 * Load an acoustic model from its binary file. Returns null on failure;
 * consult `sstune_last_error`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string or null.
 */
struct SstuneModel *sstune_model_load(const char *path);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must have come from `sstune_model_load` and not been freed.
 */
void sstune_model_free(struct SstuneModel *model);

/**
 * Number of output labels, or -1 if the handle is null.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
int32_t sstune_model_num_labels(const struct SstuneModel *model);

/**
 * Load a trigram model from an ARPA file. Returns null on failure.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string or null.
 */
struct SstuneLm *sstune_lm_load_arpa(const char *path);

/**
 * Release a language model handle. Null is a no-op.
 *
 * # Safety
 * `model` must have come from `sstune_lm_load_arpa` and not been freed.
 */
void sstune_lm_free(struct SstuneLm *model);

/**
 * Perplexity of whitespace-tokenized text (sentences separated by
 * newlines) under a loaded language model.
 *
 * # Safety
 * `model` must be a live handle; `text` a NUL-terminated string; `out`
 * a writable double.
 */
enum SstuneStatus sstune_lm_perplexity(const struct SstuneLm *model, const char *text, double *out);

/**
 * Word error rate between two whitespace-tokenized strings, as a
 * percentage of the reference length.
 *
 * # Safety
 * `reference` and `hypothesis` must be NUL-terminated strings; `out` a
 * writable double.
 */
enum SstuneStatus sstune_wer(const char *reference, const char *hypothesis, double *out);

/**
 * 100 * (baseline - system) / baseline. Fails on a non-positive baseline.
 *
 * # Safety
 * `out` must be a writable double.
 */
enum SstuneStatus sstune_relative_improvement(double baseline_wer, double system_wer, double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SSTUNE_H */
