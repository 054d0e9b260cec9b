#ifndef EMBEDSAFE_H
#define EMBEDSAFE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Pixel distance selector for [`es_image_distance`].
 */
typedef enum EsDistanceKind {
  ES_DISTANCE_KIND_L1 = 0,
  ES_DISTANCE_KIND_L2 = 1,
  ES_DISTANCE_KIND_DSSIM = 2,
  ES_DISTANCE_KIND_SOBEL = 3,
  ES_DISTANCE_KIND_COMBINED = 4,
} EsDistanceKind;

/**
 * Status codes returned by every fallible function.
 */
typedef enum EsStatus {
  ES_STATUS_OK = 0,
  ES_STATUS_NULL_POINTER = 1,
  ES_STATUS_INVALID_ARGUMENT = 2,
  ES_STATUS_IO = 3,
  ES_STATUS_CHECKPOINT = 4,
  ES_STATUS_SHAPE = 5,
  ES_STATUS_BUFFER_TOO_SMALL = 6,
  ES_STATUS_FAILURE = 7,
  ES_STATUS_PANIC = 8,
} EsStatus;

/**
 * Opaque embedding network.
 */
typedef struct EsEmbedding EsEmbedding;

/**
 * Opaque distortion generator.
 */
typedef struct EsGenerator EsGenerator;

/**
 * Opaque in-memory template store.
 */
typedef struct EsTemplateStore EsTemplateStore;

/**
 * Result of [`es_store_verify`]. `identity` is -1 and `distance` is NaN
 * when no template was eligible.
 */
typedef struct EsVerification {
  bool accepted;
  int32_t identity;
  double distance;
} EsVerification;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length
 * including the terminator, or 0 if there is no error.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t es_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *es_version(void);

/**
 * Loads an embedding checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum EsStatus es_embedding_load(const char *path, struct EsEmbedding **out);

/**
 * # Safety
 * `handle` must come from [`es_embedding_load`] or be null.
 */
void es_embedding_free(struct EsEmbedding *handle);

/**
 * Embedding dimension, or 0 for a null handle.
 *
 * # Safety
 * `handle` must be a live handle or null.
 */
size_t es_embedding_dim(const struct EsEmbedding *handle);

/**
 * Number of input values (`width·height·channels`), or 0 for null.
 *
 * # Safety
 * `handle` must be a live handle or null.
 */
size_t es_embedding_input_len(const struct EsEmbedding *handle);

/**
 * Writes the unit-norm embedding of `pixels` into `out`.
 *
 * # Safety
 * `pixels` must hold `len` floats and `out` `out_len` writable floats.
 */
enum EsStatus es_embed(const struct EsEmbedding *handle,
                       const float *pixels,
                       size_t len,
                       float *out,
                       size_t out_len);

/**
 * Loads a generator checkpoint (trained network or identity double).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum EsStatus es_generator_load(const char *path, struct EsGenerator **out);

/**
 * # Safety
 * `handle` must come from [`es_generator_load`] or be null.
 */
void es_generator_free(struct EsGenerator *handle);

/**
 * Number of input (and output) values, or 0 for null.
 *
 * # Safety
 * `handle` must be a live handle or null.
 */
size_t es_generator_input_len(const struct EsGenerator *handle);

/**
 * Writes the distorted image into `out`.
 *
 * # Safety
 * `pixels` must hold `len` floats and `out` `out_len` writable floats.
 */
enum EsStatus es_distort(const struct EsGenerator *handle,
                         const float *pixels,
                         size_t len,
                         float *out,
                         size_t out_len);

/**
 * Squared Euclidean distance between two embeddings.
 *
 * # Safety
 * `u` and `v` must each hold `len` floats; `out` must be writable.
 */
enum EsStatus es_embedding_distance(const float *u, const float *v, size_t len, double *out);

/**
 * Pixel-space distance between two images of the given shape. `param` is
 * omega for `Combined` and ignored otherwise; DSSIM uses the default
 * stabilizing constants.
 *
 * # Safety
 * `pred` and `truth` must each hold `width·height·channels` floats.
 */
enum EsStatus es_image_distance(enum EsDistanceKind kind,
                                double param,
                                const float *pred,
                                const float *truth,
                                size_t width,
                                size_t height,
                                size_t channels,
                                double *out);

/**
 * Creates an empty template store.
 *
 * # Safety
 * `out` must be writable.
 */
enum EsStatus es_store_new(struct EsTemplateStore **out);

/**
 * # Safety
 * `handle` must come from [`es_store_new`] or be null.
 */
void es_store_free(struct EsTemplateStore *handle);

/**
 * Number of stored templates, or 0 for null.
 *
 * # Safety
 * `handle` must be a live handle or null.
 */
size_t es_store_len(const struct EsTemplateStore *handle);

/**
 * Distorts `pixels` with `gen` and stores the result under `identity`.
 *
 * # Safety
 * All handles must be live; `pixels` must hold `len` floats.
 */
enum EsStatus es_store_enroll(struct EsTemplateStore *store,
                              const struct EsGenerator *gen,
                              const struct EsEmbedding *emb,
                              const float *pixels,
                              size_t len,
                              uint8_t identity);

/**
 * Verifies a probe against the store. Pass `claimed = -1` to compare with
 * every template; otherwise only templates of that identity are used.
 *
 * # Safety
 * All handles must be live; `pixels` must hold `len` floats; `out` must be
 * writable.
 */
enum EsStatus es_store_verify(const struct EsTemplateStore *store,
                              const struct EsEmbedding *emb,
                              const float *pixels,
                              size_t len,
                              double tau,
                              int32_t claimed,
                              struct EsVerification *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMBEDSAFE_H */
