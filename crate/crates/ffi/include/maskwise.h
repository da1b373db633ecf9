#ifndef MASKWISE_H
#define MASKWISE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum MwStatus {
  MW_STATUS_OK = 0,
  MW_STATUS_NULL_POINTER = 1,
  MW_STATUS_INVALID_UTF8 = 2,
  MW_STATUS_IO = 3,
  MW_STATUS_FORMAT = 4,
  MW_STATUS_CONFIG = 5,
  MW_STATUS_SHAPE = 6,
  MW_STATUS_PROMPT = 7,
  MW_STATUS_NUMERICS = 8,
  MW_STATUS_BUFFER_TOO_SMALL = 9,
  MW_STATUS_PANIC = 10,
  MW_STATUS_OTHER = 11,
} MwStatus;

// Opaque model handle.
typedef struct MwModel MwModel;

// Opaque vocabulary handle.
typedef struct MwVocab MwVocab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or an empty string.
// The pointer stays valid until the next `mw_` call on this thread.
const char *mw_last_error(void);

// Library version as a static NUL-terminated string.
const char *mw_version(void);

// Loads a vocabulary file into `*out`.
//
// # Safety
// `path` is a NUL-terminated string and `out` is writable.
enum MwStatus mw_vocab_load(const char *path, struct MwVocab **out);

// # Safety
// `vocab` is null or came from `mw_vocab_load` and was not freed.
void mw_vocab_free(struct MwVocab *vocab);

// Number of entries, or 0 for a null handle.
//
// # Safety
// `vocab` is null or a live handle.
size_t mw_vocab_size(const struct MwVocab *vocab);

// Encodes `text` (without BOS/EOS) into `ids`. `*out_len` receives the
// token count; if it exceeds `capacity` nothing is written and the call
// returns the buffer-too-small status. `ids` may be null when `capacity` is 0.
//
// # Safety
// `vocab` is live, `text` is NUL-terminated, `ids` has `capacity` slots.
enum MwStatus mw_vocab_encode(const struct MwVocab *vocab,
                              const char *text,
                              uint32_t *ids,
                              size_t capacity,
                              size_t *out_len);

// Loads a checkpoint into `*out`.
//
// # Safety
// `path` is a NUL-terminated string and `out` is writable.
enum MwStatus mw_model_load(const char *path, struct MwModel **out);

// # Safety
// `model` is null or came from `mw_model_load` and was not freed.
void mw_model_free(struct MwModel *model);

// Scores `prompt` (one `[MASK]`) against `n_labels` single-token labels.
// Writes the winning label index to `*out_index` and, when `out_probs` is
// not null, the restricted softmax in label order.
//
// # Safety
// Handles are live, `prompt` and each `labels[i]` are NUL-terminated,
// `labels` has `n_labels` entries and `out_probs` is null or has
// `n_labels` slots.
enum MwStatus mw_predict(const struct MwModel *model,
                         const struct MwVocab *vocab,
                         const char *prompt,
                         const char *const *labels,
                         size_t n_labels,
                         size_t *out_index,
                         double *out_probs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MASKWISE_H */
