#ifndef FACEGAN_H
#define FACEGAN_H

/* Generated from the Rust sources; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Nonzero values mirror the library's error
 * categories; `NullArgument`, `Utf8`, `BufferSize`, and `Panic` are
 * boundary-specific.
 */
typedef enum FaceganStatus {
  FaceganStatus_Ok = 0,
  FaceganStatus_Config = 1,
  FaceganStatus_Manifest = 2,
  FaceganStatus_Shape = 3,
  FaceganStatus_Data = 4,
  FaceganStatus_Train = 5,
  FaceganStatus_Checkpoint = 6,
  FaceganStatus_Metric = 7,
  FaceganStatus_Io = 8,
  FaceganStatus_Image = 9,
  FaceganStatus_NullArgument = 10,
  FaceganStatus_Utf8 = 11,
  FaceganStatus_BufferSize = 12,
  FaceganStatus_Panic = 13,
} FaceganStatus;

/**
 * SSIM window selector, matching the library's two supported windows.
 */
typedef enum FaceganSsimWindow {
  FaceganSsimWindow_Gaussian11 = 0,
  FaceganSsimWindow_Uniform8 = 1,
} FaceganSsimWindow;

/**
 * Opaque handle to a loaded checkpoint: generator, recognizer, and the
 * configuration they were trained with.
 */
typedef struct FaceganModel FaceganModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *facegan_version(void);

/**
 * Copy the current thread's last error message (NUL-terminated) into `buf`.
 * Returns the full message length in bytes excluding the NUL; the copy is
 * truncated to `cap - 1` bytes. `buf` may be null to query the length.
 */
size_t facegan_last_error(char *buf, size_t cap);

/**
 * Load a checkpoint file into a new model handle. On success `*out` owns
 * the model and must be released with `facegan_model_free`.
 */
enum FaceganStatus facegan_model_load(const char *path, struct FaceganModel **out);

/**
 * Release a model handle. A null pointer is a no-op.
 */
void facegan_model_free(struct FaceganModel *model);

/**
 * Upscaling factor of the loaded model (0 on null).
 */
int facegan_model_upscale(const struct FaceganModel *model);

/**
 * Side length of the square images the recognizer embeds (0 on null).
 */
int facegan_model_input_size(const struct FaceganModel *model);

/**
 * Length of identity embeddings (0 on null).
 */
int facegan_model_embedding_dim(const struct FaceganModel *model);

/**
 * Upscale one RGB8 image by the model's factor. `out` must hold
 * `(width*factor) * (height*factor) * 3` bytes; `out_len` is checked.
 */
enum FaceganStatus facegan_hallucinate_rgb8(const struct FaceganModel *model,
                                            const uint8_t *lr,
                                            size_t width,
                                            size_t height,
                                            uint8_t *out,
                                            size_t out_len);

/**
 * Embed one RGB8 image with the identity recognizer. The image must be the
 * model's square input size; `out` must hold `embedding_dim` doubles.
 */
enum FaceganStatus facegan_embed_rgb8(const struct FaceganModel *model,
                                      const uint8_t *img,
                                      size_t width,
                                      size_t height,
                                      double *out,
                                      size_t out_len);

/**
 * Peak signal-to-noise ratio between two same-size RGB8 images, in dB.
 * Identical images yield +infinity.
 */
enum FaceganStatus facegan_psnr_rgb8(const uint8_t *a,
                                     const uint8_t *b,
                                     size_t width,
                                     size_t height,
                                     double *out);

/**
 * Mean structural similarity between two same-size RGB8 images.
 */
enum FaceganStatus facegan_ssim_rgb8(const uint8_t *a,
                                     const uint8_t *b,
                                     size_t width,
                                     size_t height,
                                     enum FaceganSsimWindow window,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FACEGAN_H */
