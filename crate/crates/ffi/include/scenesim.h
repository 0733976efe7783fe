#ifndef SCENESIM_H
#define SCENESIM_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SsmStatus {
  SSM_STATUS_OK = 0,
  SSM_STATUS_NULL_POINTER = 1,
  SSM_STATUS_INVALID_ARGUMENT = 2,
  SSM_STATUS_PARSE = 3,
  SSM_STATUS_IO = 4,
  SSM_STATUS_ZERO_VARIANCE = 5,
  SSM_STATUS_NO_VALID_PLACEMENT = 6,
  SSM_STATUS_EMPTY_SIMILARITY = 7,
  SSM_STATUS_SCENE_INFEASIBLE = 8,
  SSM_STATUS_INSUFFICIENT_DATA = 9,
  SSM_STATUS_INTERNAL = 10,
  SSM_STATUS_PANIC = 11,
} SsmStatus;

/**
 * Occupancy raster.
 */
typedef struct SsmGrid SsmGrid;

/**
 * Scene description (bounds plus obstacles).
 */
typedef struct SsmScene SsmScene;

/**
 * Per-cell weights in `[0.5, 1]`.
 */
typedef struct SsmWeights SsmWeights;

/**
 * Best rotated placement.
 */
typedef struct SsmMatch {
  size_t x;
  size_t y;
  /**
   * Degrees.
   */
  double phi;
  double score;
} SsmMatch;

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *ssm_last_error_message(void);

/**
 * Creates a grid from `width * height` row-major pixels.
 *
 * # Safety
 * `pixels` must point to `width * height` bytes; `out` must be writable.
 */
enum SsmStatus ssm_grid_new(size_t width,
                            size_t height,
                            double resolution,
                            const uint8_t *pixels,
                            struct SsmGrid **out_grid);

/**
 * Reads a PGM map (and its `.meta` sidecar when present).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_grid` must be writable.
 */
enum SsmStatus ssm_grid_load_pgm(const char *path, struct SsmGrid **out_grid);

/**
 * Writes a grid as PGM plus `.meta`.
 *
 * # Safety
 * `grid` must come from this library; `path` must be NUL-terminated.
 */
enum SsmStatus ssm_grid_save_pgm(const struct SsmGrid *grid, const char *path);

/**
 * Width, height and resolution of a grid.
 *
 * # Safety
 * `grid` must come from this library; the out pointers may be null.
 */
enum SsmStatus ssm_grid_info(const struct SsmGrid *grid,
                             size_t *width,
                             size_t *height,
                             double *resolution);

/**
 * Borrowed pointer to the row-major pixels; valid while the grid lives.
 *
 * # Safety
 * `grid` must come from this library.
 */
const uint8_t *ssm_grid_pixels(const struct SsmGrid *grid);

/**
 * # Safety
 * `grid` must come from this library or be null; it must not be used afterwards.
 */
void ssm_grid_free(struct SsmGrid *grid);

/**
 * Parses a scene from JSON text.
 *
 * # Safety
 * `json` must be NUL-terminated; `out_scene` must be writable.
 */
enum SsmStatus ssm_scene_from_json(const char *json, struct SsmScene **out_scene);

/**
 * Loads a scene file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out_scene` must be writable.
 */
enum SsmStatus ssm_scene_load(const char *path, struct SsmScene **out_scene);

/**
 * Rasterizes a scene at `resolution` metres per pixel.
 *
 * # Safety
 * `scene` must come from this library; `out_grid` must be writable.
 */
enum SsmStatus ssm_scene_rasterize(const struct SsmScene *scene,
                                   double resolution,
                                   struct SsmGrid **out_grid);

/**
 * # Safety
 * `scene` must come from this library or be null; it must not be used afterwards.
 */
void ssm_scene_free(struct SsmScene *scene);

/**
 * Best placement of `templ` in `image` over the given rotations (degrees).
 *
 * # Safety
 * Handles must come from this library; `angles` must hold `n_angles` values.
 */
enum SsmStatus ssm_best_match_rotated(const struct SsmGrid *image,
                                      const struct SsmGrid *templ,
                                      const double *angles,
                                      size_t n_angles,
                                      struct SsmMatch *out_match);

/**
 * Global similarity of `test` against `train`. Pass `n_angles == 0` for the
 * default rotation set.
 *
 * # Safety
 * Handles must come from this library; `angles` must hold `n_angles` values.
 */
enum SsmStatus ssm_global_similarity(const struct SsmGrid *train,
                                     const struct SsmGrid *test,
                                     size_t window,
                                     size_t stride,
                                     const double *angles,
                                     size_t n_angles,
                                     size_t dilation_kernel,
                                     double *out_score);

/**
 * Weights from per-cell arrival counts: `clip(min(c, n_max) / n_max, 0.5, 1)`.
 *
 * # Safety
 * `counts` must hold `width * height` values; `out_weights` must be writable.
 */
enum SsmStatus ssm_weights_from_counts(size_t width,
                                       size_t height,
                                       double resolution,
                                       const uint32_t *counts,
                                       uint32_t n_max,
                                       struct SsmWeights **out_weights);

/**
 * Loads weights from an arrival-count PGM (meta with `n_max`) or a weight image.
 *
 * # Safety
 * `path` must be NUL-terminated; `out_weights` must be writable.
 */
enum SsmStatus ssm_weights_load(const char *path, struct SsmWeights **out_weights);

/**
 * Weight of cell `(x, y)`.
 *
 * # Safety
 * `weights` must come from this library.
 */
enum SsmStatus ssm_weights_get(const struct SsmWeights *weights,
                               size_t x,
                               size_t y,
                               double *out_value);

/**
 * # Safety
 * `weights` must come from this library or be null; it must not be used afterwards.
 */
void ssm_weights_free(struct SsmWeights *weights);

/**
 * Visitation-weighted score of local obstacle maps against a global map.
 * Pass `n_angles == 0` for the default rotation set.
 *
 * # Safety
 * `maps` must hold `n_maps` grid handles; `angles` must hold `n_angles` values.
 */
enum SsmStatus ssm_weighted_score(const struct SsmGrid *global,
                                  const struct SsmGrid *const *maps,
                                  size_t n_maps,
                                  const struct SsmWeights *weights,
                                  const double *angles,
                                  size_t n_angles,
                                  double *out_score);

/**
 * Relative local similarity: `ss_test - ss_train`.
 */
double ssm_local_similarity(double ss_test, double ss_train);

/**
 * Robot-frame polar point to local-map pixel coordinates (may be off-raster).
 *
 * # Safety
 * `out_x` and `out_y` must be writable.
 */
enum SsmStatus ssm_polar_to_image(double rho,
                                  double theta,
                                  double resolution,
                                  size_t width,
                                  size_t height,
                                  int64_t *out_x,
                                  int64_t *out_y);

#endif  /* SCENESIM_H */
