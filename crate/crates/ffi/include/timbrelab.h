#ifndef TIMBRELAB_H
#define TIMBRELAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Samples produced per rendered frame.
 */
#define TL_HOP_SIZE 1024

/**
 * Bins in a decoded magnitude frame.
 */
#define TL_NUM_BINS 2049

#define TL_SAMPLE_RATE 44100

/**
 * Pass as `chroma_class` for an all-zero chroma vector.
 */
#define TL_NO_CHROMA -1

typedef enum TlStatus {
  TL_STATUS_OK = 0,
  TL_STATUS_NULL_POINTER = 1,
  TL_STATUS_INVALID_ARGUMENT = 2,
  TL_STATUS_IO = 3,
  TL_STATUS_CORRUPT = 4,
  TL_STATUS_UNSUPPORTED_VERSION = 5,
  TL_STATUS_UNSUPPORTED_MODEL = 6,
  TL_STATUS_BUFFER_TOO_SMALL = 7,
  TL_STATUS_PANIC = 8,
} TlStatus;

/**
 * A loaded model.
 */
typedef struct TlModel TlModel;

/**
 * Streaming renderer bound to a model and a phase bank.
 */
typedef struct TlRenderer TlRenderer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next failing call on the same thread.
 */
const char *tl_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tl_version(void);

/**
 * Loads a `.mann` file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum TlStatus tl_model_load(const char *path, struct TlModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`tl_model_load`] not yet freed.
 */
void tl_model_free(struct TlModel *model);

/**
 * Bottleneck width, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t tl_model_bottleneck(const struct TlModel *model);

/**
 * 1 when the decoder takes the chroma vector, 0 otherwise or for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
int32_t tl_model_has_skip(const struct TlModel *model);

/**
 * 1 for a sigmoid bottleneck (latents in `[0, 1]`), 0 otherwise or for
 * null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
int32_t tl_model_is_bounded(const struct TlModel *model);

/**
 * Decodes one latent point into `TL_NUM_BINS` magnitudes.
 *
 * # Safety
 * `model` must be a live handle, `latent` must hold `latent_len` floats
 * and `out` must hold `out_len` writable floats.
 */
enum TlStatus tl_model_decode(const struct TlModel *model,
                              const float *latent,
                              size_t latent_len,
                              int32_t chroma_class,
                              float *out,
                              size_t out_len);

/**
 * Creates a renderer whose phase bank is drawn from `seed`. The renderer
 * keeps the model alive; the model handle may be freed first.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum TlStatus tl_renderer_new(const struct TlModel *model, uint64_t seed, struct TlRenderer **out);

/**
 * # Safety
 * `renderer` must be null or a handle from [`tl_renderer_new`] not yet
 * freed.
 */
void tl_renderer_free(struct TlRenderer *renderer);

/**
 * Renders the next `TL_HOP_SIZE` samples for the given control values.
 *
 * # Safety
 * `renderer` must be a live handle, `latent` must hold `latent_len`
 * floats and `out` must hold `out_len` writable floats.
 */
enum TlStatus tl_renderer_render(struct TlRenderer *renderer,
                                 const float *latent,
                                 size_t latent_len,
                                 int32_t chroma_class,
                                 float gain,
                                 float *out,
                                 size_t out_len);

/**
 * Frames rendered so far, or 0 for null.
 *
 * # Safety
 * `renderer` must be null or a live handle.
 */
uint64_t tl_renderer_frame_index(const struct TlRenderer *renderer);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TIMBRELAB_H */
