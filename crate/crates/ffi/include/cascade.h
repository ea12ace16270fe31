#ifndef CASCADE_H
#define CASCADE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Side length of the square input image in pixels.
 */
#define CASCADE_IMAGE_SIZE 64

/**
 * Bytes in one input image.
 */
#define CASCADE_IMAGE_BYTES ((CASCADE_IMAGE_SIZE * CASCADE_IMAGE_SIZE) * 3)

typedef enum CascadeStatus {
  CASCADE_STATUS_OK = 0,
  CASCADE_STATUS_NULL_POINTER = 1,
  CASCADE_STATUS_INVALID_ARGUMENT = 2,
  CASCADE_STATUS_IO = 3,
  CASCADE_STATUS_NOT_FOUND = 4,
  CASCADE_STATUS_CORRUPT = 5,
  CASCADE_STATUS_BUFFER_TOO_SMALL = 6,
  CASCADE_STATUS_INTERNAL = 7,
  CASCADE_STATUS_PANIC = 8,
} CascadeStatus;

/**
 * Opaque model handle.
 */
typedef struct CascadeModel CascadeModel;

/**
 * One detection with its mask area and decoded pose.
 */
typedef struct CascadeDetection {
  double x_min;
  double y_min;
  double x_max;
  double y_max;
  /**
   * 0 arrow, 1 tee, 2 ellipse.
   */
  uint32_t class_id;
  double score;
  double angle;
  double depth;
  uint32_t mask_pixels;
} CascadeDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static, NUL-terminated version string.
 */
const char *cascade_version(void);

/**
 * Copies the calling thread's last error message into `buf` with a
 * terminating NUL. `required` receives the full size including the NUL.
 * Passing a null `buf` only queries the size.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes; `required` must be null or
 * writable.
 */
enum CascadeStatus cascade_last_error_message(char *buf, size_t len, size_t *required);

/**
 * Loads the parameters stored in a training checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum CascadeStatus cascade_model_load(const char *path, struct CascadeModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`cascade_model_load`] and not be used afterwards.
 */
void cascade_model_free(struct CascadeModel *model);

/**
 * Sets the minimum detection score, in `[0, 1]`.
 *
 * # Safety
 * `model` must be a live handle.
 */
enum CascadeStatus cascade_model_set_score_threshold(struct CascadeModel *model, double threshold);

/**
 * Runs detection, mask and pose heads on one image.
 *
 * Writes at most `capacity` detections, best first, and the total number
 * found to `count`. If `count > capacity` the call returns
 * `BufferTooSmall` after filling the buffer.
 *
 * # Safety
 * `model` must be a live handle, `rgb` valid for `rgb_len` bytes,
 * `detections` null or valid for `capacity` elements, `count` writable.
 */
enum CascadeStatus cascade_model_detect(const struct CascadeModel *model,
                                        const uint8_t *rgb,
                                        size_t rgb_len,
                                        struct CascadeDetection *detections,
                                        size_t capacity,
                                        size_t *count);

/**
 * Intersection over union of two `[x_min, y_min, x_max, y_max]` boxes.
 *
 * # Safety
 * `a` and `b` must point to four doubles each; `out` must be writable.
 */
enum CascadeStatus cascade_box_iou(const double *a, const double *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CASCADE_H */
