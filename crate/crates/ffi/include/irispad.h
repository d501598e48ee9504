#ifndef IRISPAD_H
#define IRISPAD_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define IRISPAD_BONAFIDE 0

#define IRISPAD_ATTACK 1

/**
 * Marks a missing 3D decision in [`IrispadPipelineResult::d3`].
 */
#define IRISPAD_NONE -1

typedef enum IrispadStatus {
  IRISPAD_STATUS_OK = 0,
  IRISPAD_STATUS_NULL_POINTER = 1,
  IRISPAD_STATUS_INVALID_INPUT = 2,
  IRISPAD_STATUS_IO = 3,
  IRISPAD_STATUS_PARSE = 4,
  IRISPAD_STATUS_DIMENSION_MISMATCH = 5,
  /**
   * Collinear lights, degenerate data or diverging training.
   */
  IRISPAD_STATUS_NUMERICAL = 6,
  /**
   * Too few valid pixels to compute a 3D score.
   */
  IRISPAD_STATUS_UNSCORABLE = 7,
  IRISPAD_STATUS_PANIC = 8,
} IrispadStatus;

/**
 * Grayscale image with intensities in [0, 1].
 */
typedef struct IrispadImage IrispadImage;

/**
 * Boolean usable-pixel mask.
 */
typedef struct IrispadMask IrispadMask;

/**
 * Trained texture ensemble plus 3D threshold.
 */
typedef struct IrispadPipeline IrispadPipeline;

typedef struct IrispadPipelineResult {
  int32_t fused;
  int32_t d2;
  /**
   * `IRISPAD_NONE` when the pair was unscorable in 3D.
   */
  int32_t d3;
  /**
   * NaN when the pair was unscorable in 3D.
   */
  double q;
  double s2;
  bool unscorable_3d;
} IrispadPipelineResult;

typedef struct IrispadReport {
  double accuracy;
  /**
   * NaN when there are no attack samples.
   */
  double apcer;
  /**
   * NaN when there are no bona fide samples.
   */
  double bpcer;
  size_t attacks;
  size_t bonafides;
  size_t attack_errors;
  size_t bonafide_errors;
} IrispadReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next call.
 */
const char *irispad_last_error(void);

/**
 * Creates an image from `width * height` row-major intensities in [0, 1].
 *
 * # Safety
 * `data` must point to `width * height` doubles; `out` must be writable.
 */
enum IrispadStatus irispad_image_new(size_t width,
                                     size_t height,
                                     const double *data,
                                     struct IrispadImage **out);

/**
 * Reads an 8-bit binary PGM.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum IrispadStatus irispad_image_load_pgm(const char *path_, struct IrispadImage **out);

/**
 * # Safety
 * `image` must be null or a handle from this library not yet freed.
 */
void irispad_image_free(struct IrispadImage *image);

/**
 * Creates a mask from `width * height` bytes; nonzero means usable.
 *
 * # Safety
 * `data` must point to `width * height` bytes; `out` must be writable.
 */
enum IrispadStatus irispad_mask_new(size_t width,
                                    size_t height,
                                    const uint8_t *data,
                                    struct IrispadMask **out);

/**
 * Reads a PGM mask; values of 128 or more are usable.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum IrispadStatus irispad_mask_load_pgm(const char *path_, struct IrispadMask **out);

/**
 * # Safety
 * `mask` must be null or a handle from this library not yet freed.
 */
void irispad_mask_free(struct IrispadMask *mask);

/**
 * Photometric-stereo score of a pair lit from ±`light_angle_deg` along x.
 *
 * Returns `Unscorable` (with `*q` untouched) when too few pixels are valid.
 *
 * # Safety
 * All handles must be live; `q` must be writable.
 */
enum IrispadStatus irispad_score_3d(const struct IrispadImage *left,
                                    const struct IrispadImage *right,
                                    const struct IrispadMask *mask_left,
                                    const struct IrispadMask *mask_right,
                                    double light_angle_deg,
                                    double *q);

/**
 * Loads a model directory written by `irispad train`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum IrispadStatus irispad_pipeline_load(const char *dir, struct IrispadPipeline **out);

/**
 * # Safety
 * `pipeline` must be null or a handle from this library not yet freed.
 */
void irispad_pipeline_free(struct IrispadPipeline *pipeline);

/**
 * Runs the cascaded detector on one pair.
 *
 * # Safety
 * All handles must be live; `out` must be writable.
 */
enum IrispadStatus irispad_pipeline_run(const struct IrispadPipeline *pipeline,
                                        const struct IrispadImage *left,
                                        const struct IrispadImage *right,
                                        const struct IrispadMask *mask_left,
                                        const struct IrispadMask *mask_right,
                                        double light_angle_deg,
                                        struct IrispadPipelineResult *out);

/**
 * Cascade rule: a 2D attack verdict is final, otherwise the 3D verdict.
 *
 * # Safety
 * `out` must be writable.
 */
enum IrispadStatus irispad_fuse_decide(int32_t d2, int32_t d3, int32_t *out);

/**
 * Fits `score > threshold => attack` on `n` labeled scores.
 *
 * # Safety
 * `scores` and `classes` must point to `n` elements; `threshold` must be writable.
 */
enum IrispadStatus irispad_fit_threshold(const double *scores,
                                         const int32_t *classes,
                                         size_t n,
                                         double *threshold);

/**
 * APCER / BPCER / accuracy of `n` predictions against ground truth.
 *
 * # Safety
 * `predicted` and `truth` must point to `n` elements; `out` must be writable.
 */
enum IrispadStatus irispad_report(const int32_t *predicted,
                                  const int32_t *truth,
                                  size_t n,
                                  struct IrispadReport *out);

/**
 * Library version as a static NUL-terminated string.
 */
const char *irispad_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IRISPAD_H */
