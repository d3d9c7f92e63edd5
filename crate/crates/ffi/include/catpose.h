#ifndef CATPOSE_H
#define CATPOSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of columns in the default metric table: IoU50, IoU75, 10cm,
 * 10°, 10°10cm.
 */
#define CATPOSE_METRIC_COLUMNS 5

typedef enum CatposeStatus {
  CATPOSE_STATUS_OK = 0,
  CATPOSE_STATUS_NULL_POINTER = 1,
  CATPOSE_STATUS_INVALID_ARGUMENT = 2,
  CATPOSE_STATUS_SOLVER_FAILURE = 3,
  CATPOSE_STATUS_PANIC = 4,
} CatposeStatus;

/**
 * Opaque evaluator accumulating predictions and ground truth.
 */
typedef struct CatposeEvaluator CatposeEvaluator;

/**
 * Opaque RANSAC-PnP result.
 */
typedef struct CatposePnpResult CatposePnpResult;

typedef struct CatposeRansacConfig {
  /**
   * Inlier threshold, pixels.
   */
  double threshold;
  size_t max_iterations;
  double confidence;
  uint64_t seed;
} CatposeRansacConfig;

typedef struct CatposeIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
} CatposeIntrinsics;

/**
 * `x_cam = R·x + t`, `R` row-major.
 */
typedef struct CatposePose {
  double rotation[9];
  double translation[3];
} CatposePose;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *catpose_last_error_message(void);

struct CatposeRansacConfig catpose_ransac_config_default(void);

/**
 * RANSAC-PnP on `n` pixels (`2n` doubles) and model points (`3n` doubles,
 * normalized frame) scaled by `scale`. On success `*out` receives a handle
 * to release with [`catpose_pnp_result_free`].
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum CatposeStatus catpose_ransac_pnp(const double *pixels,
                                      const double *model,
                                      size_t n,
                                      double scale,
                                      const struct CatposeIntrinsics *intrinsics,
                                      const struct CatposeRansacConfig *config,
                                      struct CatposePnpResult **out);

/**
 * # Safety
 * `result` must come from [`catpose_ransac_pnp`] and not be used after.
 */
void catpose_pnp_result_free(struct CatposePnpResult *result);

/**
 * # Safety
 * `result` must be a live handle; `out` writable.
 */
enum CatposeStatus catpose_pnp_result_pose(const struct CatposePnpResult *result,
                                           struct CatposePose *out);

/**
 * Returns 0 for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t catpose_pnp_result_inlier_count(const struct CatposePnpResult *result);

/**
 * Returns 0 for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t catpose_pnp_result_len(const struct CatposePnpResult *result);

/**
 * Writes one byte per correspondence (1 inlier, 0 outlier); `len` must
 * equal [`catpose_pnp_result_len`].
 *
 * # Safety
 * `result` must be a live handle; `mask` must hold `len` bytes.
 */
enum CatposeStatus catpose_pnp_result_inlier_mask(const struct CatposePnpResult *result,
                                                  uint8_t *mask,
                                                  size_t len);

/**
 * Mean inlier reprojection error (px) and RANSAC iterations used.
 *
 * # Safety
 * `result` must be a live handle; outputs writable or null.
 */
enum CatposeStatus catpose_pnp_result_stats(const struct CatposePnpResult *result,
                                            double *mean_reprojection_error,
                                            size_t *iterations_used);

/**
 * Least-squares similarity `dst ≈ s·R·src + t` over `n` points (`3n`
 * doubles each). With `estimate_scale` false, `s` is fixed to 1.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum CatposeStatus catpose_umeyama(const double *src,
                                   const double *dst,
                                   size_t n,
                                   bool estimate_scale,
                                   double *out_scale,
                                   struct CatposePose *out_pose);

/**
 * Exact IoU of the boxes `scale·extents` placed at each pose.
 *
 * # Safety
 * Pointers must be valid; extents point at 3 doubles.
 */
enum CatposeStatus catpose_iou3d(const struct CatposePose *pose_a,
                                 double scale_a,
                                 const double *extents_a,
                                 const struct CatposePose *pose_b,
                                 double scale_b,
                                 const double *extents_b,
                                 double *out);

/**
 * `ŝ = mean_scale·(1 + delta)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum CatposeStatus catpose_recover_scale(double mean_scale, double delta, double *out);

/**
 * `Δs = (s_gt − mean_scale) / mean_scale`.
 *
 * # Safety
 * `out` must be writable.
 */
enum CatposeStatus catpose_gt_offset(double s_gt, double mean_scale, double *out);

/**
 * Geodesic angle between two row-major rotations, degrees.
 *
 * # Safety
 * `a` and `b` point at 9 doubles; `out` writable.
 */
enum CatposeStatus catpose_rotation_error_deg(const double *a, const double *b, double *out);

struct CatposeEvaluator *catpose_evaluator_new(void);

/**
 * # Safety
 * `evaluator` must come from [`catpose_evaluator_new`] and not be used after.
 */
void catpose_evaluator_free(struct CatposeEvaluator *evaluator);

/**
 * Adds one ground-truth object. `image_id` may be null.
 *
 * # Safety
 * `evaluator` must be live; strings nul-terminated; `extents` 3 doubles.
 */
enum CatposeStatus catpose_evaluator_add_ground_truth(struct CatposeEvaluator *evaluator,
                                                      const char *category,
                                                      const char *image_id_str,
                                                      const struct CatposePose *pose,
                                                      double scale,
                                                      const double *extents);

/**
 * Adds one scored prediction. `image_id` may be null.
 *
 * # Safety
 * `evaluator` must be live; strings nul-terminated; `extents` 3 doubles.
 */
enum CatposeStatus catpose_evaluator_add_prediction(struct CatposeEvaluator *evaluator,
                                                    const char *category,
                                                    const char *image_id_str,
                                                    double confidence,
                                                    const struct CatposePose *pose,
                                                    double scale,
                                                    const double *extents);

/**
 * Mean AP over categories, percent, for the default columns (see
 * [`CATPOSE_METRIC_COLUMNS`]). `out` must hold that many doubles.
 *
 * # Safety
 * `evaluator` must be live; `out` writable for `len` doubles.
 */
enum CatposeStatus catpose_evaluator_mean_ap(const struct CatposeEvaluator *evaluator,
                                             bool symmetry,
                                             double *out,
                                             size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CATPOSE_H */
