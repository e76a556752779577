#ifndef SPLATSTREAM_H
#define SPLATSTREAM_H

#include <stddef.h>
#include <stdint.h>

// Mask predictor kind; `Constant` uses `SsStreamConfig::predictor_value`.
typedef enum SsPredictor {
  SS_PREDICTOR_GT_ORACLE = 0,
  SS_PREDICTOR_IOU_HEURISTIC = 1,
  SS_PREDICTOR_CONSTANT = 2,
} SsPredictor;

// Result code of every fallible call.
typedef enum SsStatus {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_POINTER = 1,
  SS_STATUS_INVALID_ARGUMENT = 2,
  SS_STATUS_BUFFER_TOO_SMALL = 3,
  SS_STATUS_IO = 4,
  SS_STATUS_PIPELINE = 5,
  SS_STATUS_PANIC = 6,
} SsStatus;

// GIR selection rule.
typedef enum SsStrategy {
  SS_STRATEGY_NEAREST = 0,
  SS_STRATEGY_MOST_CONTRIBUTIVE = 1,
} SsStrategy;

typedef struct SsCamera SsCamera;

// Per-pixel candidates of one incoming frame.
typedef struct SsFrame SsFrame;

typedef struct SsGir SsGir;

typedef struct SsStore SsStore;

typedef struct SsStream SsStream;

// One Gaussian in activated form: `opacity` in (0, 1], `scale` as standard
// deviations, `rotation` as a unit `(w, x, y, z)` quaternion.
typedef struct SsGaussian {
  double position[3];
  double scale[3];
  double rotation[4];
  double color[3];
  double opacity;
} SsGaussian;

// Pinhole camera with a world-to-camera rotation `(w, x, y, z)` and translation.
typedef struct SsCameraDesc {
  double fx;
  double fy;
  double cx;
  double cy;
  double rotation[4];
  double translation[3];
  uint32_t width;
  uint32_t height;
  double near;
  double far;
} SsCameraDesc;

typedef struct SsStreamConfig {
  double tau_mask;
  double k_sigma;
  uint32_t window_radius;
  double theta_red;
  enum SsPredictor predictor;
  double predictor_value;
  enum SsStrategy strategy;
  double gir_tau;
  float background[3];
} SsStreamConfig;

typedef struct SsFrameStats {
  uint64_t frame;
  size_t inserted;
  size_t removed;
  size_t live_count;
  double c_ratio;
} SsFrameStats;

// Oriented box; `axes` holds the three unit axes one after another.
typedef struct SsObb {
  double center[3];
  double axes[9];
  double half_extents[3];
} SsObb;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Writes the last failure message of this thread, NUL-terminated and truncated
// to `capacity`, and returns the full message length excluding the NUL.
// Pass a null buffer to query the length.
//
// # Safety
// `buffer` must be null or valid for `capacity` bytes.
size_t ss_last_error_message(char *buffer, size_t capacity);

// Library version as a static NUL-terminated string.
const char *ss_version(void);

struct SsStore *ss_store_new(void);

// Loads a PLY scene into a new store; ids follow file order from 0.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SsStatus ss_store_load(const char *path, struct SsStore **out);

// # Safety
// `store` must be null or a handle from this library that is not used afterwards.
void ss_store_free(struct SsStore *store);

// Inserts `count` Gaussians and writes their new ids to `out_ids` (which may be
// null). The batch is rejected as a whole if any Gaussian is invalid.
//
// # Safety
// `gaussians` must hold `count` elements and `out_ids` must be null or hold `count` slots.
enum SsStatus ss_store_insert(struct SsStore *store,
                              const struct SsGaussian *gaussians,
                              size_t count,
                              uint64_t birth_frame,
                              uint64_t *out_ids);

// Removes the listed ids; unknown ids are ignored. `out_removed` may be null.
//
// # Safety
// `ids` must hold `count` elements.
enum SsStatus ss_store_remove(struct SsStore *store,
                              const uint64_t *ids,
                              size_t count,
                              size_t *out_removed);

// Number of live Gaussians, or 0 for a null handle.
//
// # Safety
// `store` must be null or a live handle.
size_t ss_store_len(const struct SsStore *store);

// Copies the Gaussian with `id` into `out`; `InvalidArgument` if it is not live.
//
// # Safety
// `store` must be a live handle and `out` a valid pointer.
enum SsStatus ss_store_get(const struct SsStore *store, uint64_t id, struct SsGaussian *out);

// # Safety
// `desc` and `out` must be valid pointers.
enum SsStatus ss_camera_new(const struct SsCameraDesc *desc, struct SsCamera **out);

// Loads a camera TOML file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SsStatus ss_camera_load(const char *path, struct SsCamera **out);

// # Safety
// `camera` must be null or a handle that is not used afterwards.
void ss_camera_free(struct SsCamera *camera);

// Renders `store` into `out_rgb`, row-major interleaved RGB, which must hold
// `3 * width * height` floats.
//
// # Safety
// `background` must hold 3 floats and `out_rgb` `capacity` floats.
enum SsStatus ss_render(const struct SsStore *store,
                        const struct SsCamera *camera,
                        const float *background,
                        float *out_rgb,
                        size_t capacity);

// Builds a Gaussian image of `store`; `tau` is only used by the nearest rule.
//
// # Safety
// Handles must be live and `out` a valid pointer.
enum SsStatus ss_gir_build(const struct SsStore *store,
                           const struct SsCamera *camera,
                           enum SsStrategy rule,
                           double tau,
                           struct SsGir **out);

// # Safety
// `gir` must be null or a handle that is not used afterwards.
void ss_gir_free(struct SsGir *gir);

// Copies the id map (row-major, `-1` for background) into `out_ids`, which
// must hold `width * height` entries.
//
// # Safety
// `out_ids` must hold `capacity` elements.
enum SsStatus ss_gir_id_map(const struct SsGir *gir, int64_t *out_ids, size_t capacity);

// Writes the binary GIR container. `out_len` always receives the required
// size; pass a null buffer to query it.
//
// # Safety
// `buffer` must be null or hold `capacity` bytes; `out_len` must be valid.
enum SsStatus ss_gir_serialize(const struct SsGir *gir,
                               uint8_t *buffer,
                               size_t capacity,
                               size_t *out_len);

struct SsFrame *ss_frame_new(uint32_t width, uint32_t height);

// Places a candidate at pixel `(x, y)`, replacing any earlier one.
//
// # Safety
// `frame` must be a live handle and `gaussian` a valid pointer.
enum SsStatus ss_frame_set(struct SsFrame *frame,
                           uint32_t x,
                           uint32_t y,
                           const struct SsGaussian *gaussian);

// # Safety
// `frame` must be null or a handle that is not used afterwards.
void ss_frame_free(struct SsFrame *frame);

// Fills `out` with the default stream configuration.
//
// # Safety
// `out` must be a valid pointer.
enum SsStatus ss_stream_config_default(struct SsStreamConfig *out);

// # Safety
// `config` and `out` must be valid pointers.
enum SsStatus ss_stream_new(const struct SsStreamConfig *config, struct SsStream **out);

// Runs one streaming update. The frame is only read. `out_stats` may be null.
//
// # Safety
// Handles must be live; `out_stats` must be null or valid.
enum SsStatus ss_stream_step(struct SsStream *stream,
                             const struct SsCamera *camera,
                             const struct SsFrame *frame,
                             struct SsFrameStats *out_stats);

// Live Gaussians in the stream's store, or 0 for a null handle.
//
// # Safety
// `stream` must be null or a live handle.
size_t ss_stream_live_count(const struct SsStream *stream);

// Removed over inserted Gaussians across every step so far.
//
// # Safety
// `stream` must be null or a live handle.
double ss_stream_c_ratio(const struct SsStream *stream);

// Copies the stream's current store into a new, independent store handle.
//
// # Safety
// `stream` must be a live handle and `out` a valid pointer.
enum SsStatus ss_stream_snapshot(const struct SsStream *stream, struct SsStore **out);

// # Safety
// `stream` must be null or a handle that is not used afterwards.
void ss_stream_free(struct SsStream *stream);

// Box enclosing the `k_sigma` level set of a Gaussian.
//
// # Safety
// `gaussian` and `out` must be valid pointers.
enum SsStatus ss_gaussian_obb(const struct SsGaussian *gaussian, double k_sigma, struct SsObb *out);

// Exact volume of the intersection of two oriented boxes.
//
// # Safety
// All pointers must be valid.
enum SsStatus ss_obb_intersection_volume(const struct SsObb *a, const struct SsObb *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPLATSTREAM_H */
