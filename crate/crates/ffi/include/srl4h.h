#ifndef SRL4H_H
#define SRL4H_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum {
  SRL4H_STATUS_OK = 0,
  SRL4H_STATUS_NULL_POINTER = 1,
  SRL4H_STATUS_INVALID_UTF8 = 2,
  SRL4H_STATUS_CONFIG = 3,
  SRL4H_STATUS_SHAPE = 4,
  SRL4H_STATUS_NON_FINITE = 5,
  SRL4H_STATUS_FORMAT = 6,
  SRL4H_STATUS_IO = 7,
  SRL4H_STATUS_RUNTIME = 8,
  SRL4H_STATUS_PANIC = 9,
} Srl4hStatus;

/**
 * Inference-only policy handle.
 */
typedef struct Srl4hPolicy Srl4hPolicy;

/**
 * Training run handle.
 */
typedef struct Srl4hTrainer Srl4hTrainer;

/**
 * Scalar summary of one training iteration. `srl_loss` is NaN when the
 * auxiliary objective did not run.
 */
typedef struct {
  uint64_t iteration;
  double mean_step_reward;
  double policy_loss;
  double value_loss;
  double entropy;
  double srl_loss;
  double mean_kl;
  double learning_rate;
  double embedding_std;
  uint32_t skipped_updates;
} Srl4hIterationStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Null-terminated library version. Static; do not free.
 */
const char *srl4h_version(void);

/**
 * Copy the calling thread's last error message into `buf` (truncated,
 * always null-terminated when `len > 0`). Returns the full message length
 * in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t srl4h_last_error_message(char *buf, size_t len);

/**
 * Build a trainer from a JSON experiment config.
 *
 * # Safety
 * `config_json` must be a null-terminated string; `out` must be writable.
 */
Srl4hStatus srl4h_trainer_new(const char *config_json, Srl4hTrainer **out);

/**
 * Rebuild a trainer from a config and a checkpoint written by
 * [`srl4h_trainer_save_checkpoint`].
 *
 * # Safety
 * String arguments must be null-terminated; `out` must be writable.
 */
Srl4hStatus srl4h_trainer_resume(const char *config_json,
                                 const char *checkpoint_path,
                                 Srl4hTrainer **out);

/**
 * # Safety
 * `trainer` must be null or a handle from this library, not yet freed.
 */
void srl4h_trainer_free(Srl4hTrainer *trainer);

/**
 * Run one iteration and fill `stats` (may be null).
 *
 * # Safety
 * `trainer` must be a live handle; `stats` null or writable.
 */
Srl4hStatus srl4h_trainer_step(Srl4hTrainer *trainer, Srl4hIterationStats *stats);

/**
 * Completed iterations, or 0 for a null handle.
 *
 * # Safety
 * `trainer` must be null or a live handle.
 */
uint64_t srl4h_trainer_iteration(const Srl4hTrainer *trainer);

/**
 * # Safety
 * `trainer` must be a live handle; `path` null-terminated.
 */
Srl4hStatus srl4h_trainer_save_checkpoint(const Srl4hTrainer *trainer, const char *path);

/**
 * Load the policy part of a checkpoint. Shapes are checked against the
 * networks the config describes.
 *
 * # Safety
 * String arguments must be null-terminated; `out` must be writable.
 */
Srl4hStatus srl4h_policy_load(const char *config_json,
                              const char *checkpoint_path,
                              Srl4hPolicy **out);

/**
 * Policy handle from a live trainer's current parameters.
 *
 * # Safety
 * `trainer` must be a live handle; `out` writable.
 */
Srl4hStatus srl4h_trainer_policy(const Srl4hTrainer *trainer, Srl4hPolicy **out);

/**
 * # Safety
 * `policy` must be null or a handle from this library, not yet freed.
 */
void srl4h_policy_free(Srl4hPolicy *policy);

/**
 * Width of one observation row, or 0 for a null handle.
 *
 * # Safety
 * `policy` must be null or a live handle.
 */
size_t srl4h_policy_obs_dim(const Srl4hPolicy *policy);

/**
 * Width of one action row, or 0 for a null handle.
 *
 * # Safety
 * `policy` must be null or a live handle.
 */
size_t srl4h_policy_action_dim(const Srl4hPolicy *policy);

/**
 * Mean actions for `rows` row-major observations (privileged channels
 * zeroed). `obs` holds `rows * obs_dim` floats; `actions` receives
 * `rows * action_dim`, and `actions_len` must equal that.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
Srl4hStatus srl4h_policy_act(const Srl4hPolicy *policy,
                             const float *obs,
                             size_t rows,
                             float *actions,
                             size_t actions_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SRL4H_H */
