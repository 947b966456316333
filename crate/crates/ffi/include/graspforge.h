#ifndef GRASPFORGE_H
#define GRASPFORGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GfStatus {
  GF_STATUS_OK = 0,
  GF_STATUS_NULL_POINTER = 1,
  GF_STATUS_INVALID_ARGUMENT = 2,
  /*
   A file the call needs is missing or unreadable.
   */
  GF_STATUS_NOT_FOUND = 3,
  /*
   Simulation, sampling or inference failed.
   */
  GF_STATUS_FAILED = 4,
  /*
   A Rust panic was caught at the boundary.
   */
  GF_STATUS_PANIC = 5,
} GfStatus;

/*
 A trained diffusion policy for one object.
 */
typedef struct GfPolicy GfPolicy;

/*
 A run directory with its stored config and simulation environment.
 */
typedef struct GfRun GfRun;

/*
 Rejection sampler of validation object poses for one object.
 */
typedef struct GfSampler GfSampler;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or "" after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *gf_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *gf_version(void);

/*
 Opens a run directory created by the `graspforge` CLI.

 # Safety
 `run_dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GfStatus gf_run_open(const char *run_dir, struct GfRun **out);

/*
 # Safety
 `run` must come from `gf_run_open` and not be used afterwards. Null is ignored.
 */
void gf_run_free(struct GfRun *run);

/*
 Loads the trained policy for `object` ("banana", "bottle" or "camera").

 # Safety
 `run` must be a live handle, `object` a NUL-terminated string, `out` valid.
 */
enum GfStatus gf_policy_load(const struct GfRun *run, const char *object, struct GfPolicy **out);

/*
 # Safety
 `policy` must come from `gf_policy_load` and not be used afterwards. Null is ignored.
 */
void gf_policy_free(struct GfPolicy *policy);

/*
 Length of the observation history `gf_policy_sample` expects, or 0 for null.

 # Safety
 `policy` must be null or a live handle.
 */
size_t gf_policy_history_len(const struct GfPolicy *policy);

/*
 Number of doubles in one sampled action block (prediction steps * hand joints), or 0 for null.

 # Safety
 `policy` must be null or a live handle.
 */
size_t gf_policy_block_len(const struct GfPolicy *policy);

/*
 Samples one action block for a stacked observation history. The result
 depends only on the inputs and `seed`.

 # Safety
 `history` must hold `history_len` doubles and `out` `out_len` doubles.
 */
enum GfStatus gf_policy_sample(const struct GfPolicy *policy,
                               const double *history,
                               size_t history_len,
                               uint64_t seed,
                               double *out,
                               size_t out_len);

/*
 Closed-loop success rate of `policy` over `episodes` freshly sampled
 validation setups, using the run's rollout settings.

 # Safety
 `run` and `policy` must be live handles and `out_success_rate` valid.
 */
enum GfStatus gf_policy_evaluate(const struct GfRun *run,
                                 const struct GfPolicy *policy,
                                 size_t episodes,
                                 uint64_t seed,
                                 double *out_success_rate);

/*
 Creates a pose sampler from the run's pose statistics.

 # Safety
 `run` must be a live handle, `object` a NUL-terminated string, `out` valid.
 */
enum GfStatus gf_sampler_new(const struct GfRun *run, const char *object, struct GfSampler **out);

/*
 # Safety
 `sampler` must come from `gf_sampler_new` and not be used afterwards. Null is ignored.
 */
void gf_sampler_free(struct GfSampler *sampler);

/*
 Draws one collision-free object pose in the hand-base frame as
 `[x, y, theta]` (metres, radians).

 # Safety
 `sampler` must be a live handle and `out_pose` point to 3 doubles.
 */
enum GfStatus gf_sampler_sample(const struct GfSampler *sampler, uint64_t seed, double *out_pose);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRASPFORGE_H */
