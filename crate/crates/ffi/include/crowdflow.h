#ifndef CROWDFLOW_H
#define CROWDFLOW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum CfStatus {
  CF_STATUS_OK = 0,
  CF_STATUS_NULL_POINTER = 1,
  CF_STATUS_INVALID_ARGUMENT = 2,
  CF_STATUS_SHAPE = 3,
  CF_STATUS_OUT_OF_BOUNDS = 4,
  CF_STATUS_NON_FINITE = 5,
  CF_STATUS_FORMAT = 6,
  CF_STATUS_IO = 7,
  CF_STATUS_UTF8 = 8,
  CF_STATUS_PANIC = 9,
} CfStatus;

// Growable list of detections.
typedef struct CfDetections CfDetections;

// Trained network.
typedef struct CfModel CfModel;

// Tracking result.
typedef struct CfTracklets CfTracklets;

// A point detection. Coordinates are in pixels, origin at the top-left
// image corner.
typedef struct CfDetection {
  size_t frame;
  double x;
  double y;
  double confidence;
} CfDetection;

// An annotated head with its identity.
typedef struct CfHead {
  size_t frame;
  uint64_t id;
  double x;
  double y;
} CfHead;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *cf_version(void);

// Load a checkpoint written by the trainer.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum CfStatus cf_model_load(const char *path, struct CfModel **out);

// # Safety
// `model` must come from [`cf_model_load`] or be null.
void cf_model_free(struct CfModel *model);

// Frame pairing gap of the model.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum CfStatus cf_model_tau(const struct CfModel *model, size_t *out);

// Run the network on a frame and its earlier partner. Both images are
// 3-channel planar `width × height`; extents must be multiples of 8.
// Writes the finest density map to `out_density` and, if the model has a
// localization head and `out_localization` is non-null, the finest
// localization map.
//
// # Safety
// Image buffers must hold `3·width·height` floats, outputs
// `width·height` doubles.
enum CfStatus cf_model_predict(const struct CfModel *model,
                               const float *current,
                               const float *previous,
                               size_t width,
                               size_t height,
                               double *out_density,
                               double *out_localization);

// Empty detection list.
struct CfDetections *cf_detections_new(void);

// # Safety
// `dets` must be a live handle or null.
void cf_detections_free(struct CfDetections *dets);

// # Safety
// `dets` must be a live handle.
enum CfStatus cf_detections_push(struct CfDetections *dets, struct CfDetection det);

// Number of detections, 0 for a null handle.
//
// # Safety
// `dets` must be a live handle or null.
size_t cf_detections_len(const struct CfDetections *dets);

// # Safety
// `dets` must be a live handle; `out` must be writable.
enum CfStatus cf_detections_get(const struct CfDetections *dets,
                                size_t index,
                                struct CfDetection *out);

// Non-maximum suppression on a localization map; appends the peaks,
// stamped with `frame`, to `dets`.
//
// # Safety
// `map` must hold `width·height` doubles; `dets` must be a live handle.
enum CfStatus cf_localize(const double *map,
                          size_t width,
                          size_t height,
                          size_t frame,
                          double theta,
                          size_t radius,
                          struct CfDetections *dets);

// Link detections into tracklets by min-cost flow.
//
// # Safety
// `dets` must be a live handle; `out` must be writable.
enum CfStatus cf_track(const struct CfDetections *dets,
                       double gate,
                       double entry_cost,
                       double exit_cost,
                       struct CfTracklets **out);

// # Safety
// `t` must come from [`cf_track`] or be null.
void cf_tracklets_free(struct CfTracklets *t);

// Number of tracklets, 0 for a null handle.
//
// # Safety
// `t` must be a live handle or null.
size_t cf_tracklets_len(const struct CfTracklets *t);

// Identity, length and average confidence of tracklet `index`. Any output
// pointer may be null.
//
// # Safety
// `t` must be a live handle; non-null outputs must be writable.
enum CfStatus cf_tracklet_info(const struct CfTracklets *t,
                               size_t index,
                               uint64_t *out_id,
                               size_t *out_len,
                               double *out_confidence);

// Detection `k` of tracklet `index`, in frame order.
//
// # Safety
// `t` must be a live handle; `out` must be writable.
enum CfStatus cf_tracklet_detection(const struct CfTracklets *t,
                                    size_t index,
                                    size_t k,
                                    struct CfDetection *out);

// Counting MAE and MSE (root of the mean squared error) over `n` frames.
//
// # Safety
// `truth` and `estimate` must hold `n` doubles; outputs must be writable.
enum CfStatus cf_mae_mse(const double *truth,
                         const double *estimate,
                         size_t n,
                         double *out_mae,
                         double *out_mse);

// Localization mean average precision over the 1–25 px thresholds.
//
// # Safety
// `dets` must be a live handle, `heads` must hold `n_heads` entries and
// `out` must be writable.
enum CfStatus cf_l_map(const struct CfDetections *dets,
                       const struct CfHead *heads,
                       size_t n_heads,
                       double *out);

// Ground-truth density map of `n` heads given as interleaved `x, y`
// pairs. `fixed_sigma > 0` selects a fixed kernel, otherwise the
// neighbour-adaptive one.
//
// # Safety
// `xy` must hold `2n` doubles, `out` `width·height` doubles.
enum CfStatus cf_density_map(const double *xy,
                             size_t n,
                             size_t width,
                             size_t height,
                             double fixed_sigma,
                             double *out);

// Message of the last failed call on this thread, or null if none failed.
// The pointer stays valid until the next failing call on the same thread.
const char *cf_last_error_message(void);

// Forget the last error message on this thread.
void cf_clear_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CROWDFLOW_H */
