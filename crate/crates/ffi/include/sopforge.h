#ifndef SOPFORGE_H
#define SOPFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_NULL_POINTER = 1,
  SF_STATUS_INVALID_ARGUMENT = 2,
  SF_STATUS_INVALID_UTF8 = 3,
  SF_STATUS_IO = 4,
  SF_STATUS_FORMAT = 5,
  SF_STATUS_INPUT_MISMATCH = 6,
  SF_STATUS_WRONG_STAGE = 7,
  SF_STATUS_NOT_AWAITING = 8,
  SF_STATUS_RETRY_EXHAUSTED = 9,
  SF_STATUS_AGENT_FAILURE = 10,
  SF_STATUS_BUFFER_TOO_SMALL = 11,
  SF_STATUS_PANIC = 12,
} SfStatus;

typedef enum SfTask {
  SF_TASK_TEXT_TO_VIDEO = 0,
  SF_TASK_IMAGE_TO_VIDEO = 1,
  SF_TASK_EXTEND_VIDEO = 2,
  SF_TASK_VIDEO_EDIT = 3,
  SF_TASK_CONNECT_VIDEOS = 4,
  SF_TASK_SIMULATE_DIGITAL_WORLD = 5,
} SfTask;

typedef enum SfStage {
  SF_STAGE_ENHANCE = 0,
  SF_STAGE_FIRST_FRAME = 1,
  SF_STAGE_EDIT_FRAME = 2,
  SF_STAGE_GENERATE_VIDEO = 3,
  SF_STAGE_CONNECT = 4,
  SF_STAGE_DONE = 5,
} SfStage;

typedef enum SfDecision {
  SF_DECISION_APPROVE = 0,
  SF_DECISION_RETRY = 1,
  SF_DECISION_ROUTE_TO_EDIT = 2,
  SF_DECISION_ABORT = 3,
} SfDecision;

typedef enum SfRunStatus {
  SF_RUN_STATUS_AWAITING_DECISION = 0,
  SF_RUN_STATUS_RUNNING = 1,
  SF_RUN_STATUS_DONE = 2,
  SF_RUN_STATUS_FAILED = 3,
} SfRunStatus;

// Opaque pipeline run handle; owns the agents it executes with.
typedef struct SfRun SfRun;

// Opaque video handle.
typedef struct SfVideo SfVideo;

// Metrics of one video. `has_*` is 1 when the matching field is set.
typedef struct SfMetrics {
  double video_ti;
  int32_t has_video_ti;
  double tcon;
  int32_t has_tcon;
  double dynamic_degree;
  double motion_smoothness;
} SfMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty if none. The
// pointer stays valid until the next failing call on the same thread.
const char *sf_last_error(void);

// Library version as a static NUL-terminated string.
const char *sf_version(void);

// FNV-1a 64 of a UTF-8 string.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum SfStatus sf_hash_text(const char *text, uint64_t *out);

// First `count` splitmix64 values of `seed`, mapped to [-1, 1).
//
// # Safety
// `out` must point to `count` writable doubles.
enum SfStatus sf_rng_stream(uint64_t seed, uintptr_t count, double *out);

// Hidden ground-truth video for `prompt`.
//
// # Safety
// `prompt` must be a NUL-terminated string; `out` must be writable. The
// returned handle is freed with [`sf_video_free`].
enum SfStatus sf_oracle_render(const char *prompt,
                               int32_t digital_style,
                               uintptr_t t_frames,
                               struct SfVideo **out);

// Builds a video from `t*h*w` pixels in [-1, 1], frame-major then row-major.
//
// # Safety
// `pixels` must point to `t*h*w` readable doubles; `out` must be writable.
enum SfStatus sf_video_create(uintptr_t t,
                              uintptr_t h,
                              uintptr_t w,
                              const double *pixels,
                              struct SfVideo **out);

// Frame count and frame size.
//
// # Safety
// `video` must be a live handle; the out pointers must be writable.
enum SfStatus sf_video_dims(const struct SfVideo *video, uintptr_t *t, uintptr_t *h, uintptr_t *w);

// Copies all pixels into `out`, which must hold at least `t*h*w` doubles.
//
// # Safety
// `video` must be a live handle; `out` must point to `capacity` writable doubles.
enum SfStatus sf_video_pixels(const struct SfVideo *video, double *out, uintptr_t capacity);

// Releases a video handle. Null is ignored.
//
// # Safety
// `video` must be null or a handle from this library not yet freed.
void sf_video_free(struct SfVideo *video);

// Encodes `video` as TVID bytes. `*written` receives the encoded size; if
// `capacity` is too small nothing is copied and `BUFFER_TOO_SMALL` is returned.
//
// # Safety
// `video` must be a live handle; `out` must point to `capacity` writable
// bytes (or be null with `capacity` 0); `written` must be writable.
enum SfStatus sf_tvid_encode(const struct SfVideo *video,
                             uint8_t *out,
                             uintptr_t capacity,
                             uintptr_t *written);

// Parses TVID bytes.
//
// # Safety
// `bytes` must point to `len` readable bytes; `out` must be writable.
enum SfStatus sf_tvid_decode(const uint8_t *bytes, uintptr_t len, struct SfVideo **out);

// Writes `video` to a TVID file.
//
// # Safety
// `video` must be a live handle; `path` must be a NUL-terminated string.
enum SfStatus sf_tvid_save(const struct SfVideo *video, const char *path);

// Reads a TVID file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum SfStatus sf_tvid_load(const char *path, struct SfVideo **out);

// Metrics of `video`. `prompt` and `reference` may be null.
//
// # Safety
// `video` must be a live handle; `reference` null or live; `prompt` null or
// NUL-terminated; `out` writable.
enum SfStatus sf_metrics(const struct SfVideo *video,
                         const char *prompt,
                         const struct SfVideo *reference,
                         struct SfMetrics *out);

// Creates a run with freshly initialised agents. `prompt` may be null for
// tasks that do not need one. For image-to-video the first frame of
// `inputs[0]` is the input image; other tasks take `inputs` as videos.
//
// # Safety
// `prompt` null or NUL-terminated; `inputs` must point to `n_inputs` live
// handles (or be null with `n_inputs` 0); `out` writable. Free the run with
// [`sf_run_free`].
enum SfStatus sf_run_create(enum SfTask task,
                            const char *prompt,
                            const struct SfVideo *const *inputs,
                            uintptr_t n_inputs,
                            uint64_t seed,
                            struct SfRun **out);

// Executes the current stage if the run is running, stopping at its checkpoint.
//
// # Safety
// `run` must be a live handle.
enum SfStatus sf_run_advance(struct SfRun *run);

// Applies a human decision at `stage`, then executes the next stage.
//
// # Safety
// `run` must be a live handle.
enum SfStatus sf_run_decide(struct SfRun *run, enum SfStage stage, enum SfDecision decision);

// Approves every checkpoint until the run ends.
//
// # Safety
// `run` must be a live handle.
enum SfStatus sf_run_auto(struct SfRun *run);

// Current stage and status.
//
// # Safety
// `run` must be a live handle; `stage` and `status` writable.
enum SfStatus sf_run_state(const struct SfRun *run, enum SfStage *stage, enum SfRunStatus *status);

// Retry count at `stage`.
//
// # Safety
// `run` must be a live handle; `out` writable.
enum SfStatus sf_run_retries(const struct SfRun *run, enum SfStage stage, uint32_t *out);

// Copy of the final video of a finished run.
//
// # Safety
// `run` must be a live handle; `out` writable.
enum SfStatus sf_run_final_video(const struct SfRun *run, struct SfVideo **out);

// Releases a run handle. Null is ignored.
//
// # Safety
// `run` must be null or a handle from [`sf_run_create`] not yet freed.
void sf_run_free(struct SfRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOPFORGE_H */
