#ifndef LSM_H
#define LSM_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LsmStatus {
  LSM_STATUS_OK = 0,
  /**
   * Null pointer, bad length or bad enum value from the caller.
   */
  LSM_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Malformed or inconsistent input data.
   */
  LSM_STATUS_DATA_ERROR = 2,
  LSM_STATUS_NUMERICAL_ERROR = 3,
  LSM_STATUS_IO_ERROR = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  LSM_STATUS_PANIC = 5,
} LsmStatus;

/**
 * Selects a render buffer for [`lsm_render_copy`].
 */
typedef enum LsmBuffer {
  /**
   * Row-major RGB, 3 values per pixel.
   */
  LSM_BUFFER_COLOR = 0,
  LSM_BUFFER_DEPTH = 1,
  LSM_BUFFER_ALPHA = 2,
  /**
   * Row-major semantic features, `feature_dim` values per pixel.
   */
  LSM_BUFFER_FEATURE = 3,
} LsmBuffer;

typedef struct LsmCamera LsmCamera;

typedef struct LsmField LsmField;

typedef struct LsmRender LsmRender;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message on this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL, or
 * 0 when no error has been recorded.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t lsm_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lsm_version(void);

/**
 * Loads a field file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LsmStatus lsm_field_load(const char *path, struct LsmField **out);

/**
 * Number of Gaussians in a field, or 0 for a null handle.
 *
 * # Safety
 * `field` must be null or a live handle.
 */
size_t lsm_field_len(const struct LsmField *field);

/**
 * # Safety
 * `field` must be null or a handle not yet freed.
 */
void lsm_field_free(struct LsmField *field);

/**
 * Creates a pinhole camera. `rotation` is row-major world-to-camera.
 *
 * # Safety
 * `rotation` must point to 9 doubles, `translation` to 3, `out` writable.
 */
enum LsmStatus lsm_camera_new(double fx,
                              double fy,
                              double cx,
                              double cy,
                              size_t width,
                              size_t height,
                              const double *rotation,
                              const double *translation,
                              struct LsmCamera **out);

/**
 * Loads camera `index` from a camera JSON file (one object or an array).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LsmStatus lsm_camera_load(const char *path, size_t index, struct LsmCamera **out);

/**
 * # Safety
 * `camera` must be null or a handle not yet freed.
 */
void lsm_camera_free(struct LsmCamera *camera);

/**
 * Renders a field. `background` is an RGB triple and may be null for black.
 *
 * # Safety
 * Handles must be live; `background` null or 3 doubles; `out` writable.
 */
enum LsmStatus lsm_render(const struct LsmField *field,
                          const struct LsmCamera *camera,
                          const double *background,
                          struct LsmRender **out);

/**
 * Writes width, height and feature dimension of a render. Any pointer may be null.
 *
 * # Safety
 * `render` must be a live handle; non-null outputs must be writable.
 */
enum LsmStatus lsm_render_shape(const struct LsmRender *render,
                                size_t *width,
                                size_t *height,
                                size_t *feature_dim);

/**
 * Copies one render buffer into `dst`, which must hold exactly `len`
 * doubles (width x height x channels).
 *
 * # Safety
 * `render` must be a live handle; `dst` must point to `len` writable doubles.
 */
enum LsmStatus lsm_render_copy(const struct LsmRender *render,
                               enum LsmBuffer which,
                               double *dst,
                               size_t len);

/**
 * # Safety
 * `render` must be null or a handle not yet freed.
 */
void lsm_render_free(struct LsmRender *render);

/**
 * Estimates the focal length of a point map given as `width * height * 3`
 * row-major camera-frame points; NaN marks invalid pixels. `confidence`
 * (one value per pixel, each at least 1) may be null for uniform weights.
 *
 * # Safety
 * `points` must hold `width * height * 3` doubles, `confidence` null or
 * `width * height`, `focal` writable.
 */
enum LsmStatus lsm_estimate_focal(const double *points,
                                  const double *confidence,
                                  size_t width,
                                  size_t height,
                                  double *focal);

/**
 * Robust pose from `count` 3D points (`count * 3` doubles) and their pixels
 * (`count * 2`). Writes a row-major world-to-camera rotation, translation
 * and the inlier ratio (`inlier_ratio` may be null).
 *
 * # Safety
 * Input pointers must hold the stated number of doubles; `rotation` must
 * point to 9 writable doubles and `translation` to 3.
 */
enum LsmStatus lsm_estimate_pose(const double *points,
                                 const double *pixels,
                                 size_t count,
                                 double fx,
                                 double fy,
                                 double cx,
                                 double cy,
                                 uint64_t seed,
                                 size_t iterations,
                                 double threshold_px,
                                 double *rotation,
                                 double *translation,
                                 double *inlier_ratio);

/**
 * Depth metrics over `count` pixels: absolute relative error and the
 * fraction within the ratio threshold, both in percent. `mask` (nonzero =
 * evaluate) may be null.
 *
 * # Safety
 * `pred` and `gt` must hold `count` doubles, `mask` null or `count` bytes,
 * `rel` and `tau` writable.
 */
enum LsmStatus lsm_depth_metrics(const double *pred,
                                 const double *gt,
                                 const uint8_t *mask,
                                 size_t count,
                                 double *rel,
                                 double *tau);

/**
 * PSNR in dB between two buffers of `count` values, capped for identical inputs.
 *
 * # Safety
 * `a` and `b` must hold `count` doubles; `out` must be writable.
 */
enum LsmStatus lsm_psnr(const double *a,
                        const double *b,
                        size_t count,
                        double max_val,
                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LSM_H */
