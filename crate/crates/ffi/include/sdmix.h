#ifndef SDMIX_H
#define SDMIX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum SdmixStatus {
  SDMIX_STATUS_OK = 0,
  SDMIX_STATUS_CONFIG = 1,
  SDMIX_STATUS_DATA = 2,
  SDMIX_STATUS_NUMERIC = 3,
  SDMIX_STATUS_INVALID_ARGUMENT = 4,
  SDMIX_STATUS_IO = 5,
  SDMIX_STATUS_PANIC = 6,
} SdmixStatus;

/**
 * Opaque network handle.
 */
typedef struct SdmixNet SdmixNet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *sdmix_last_error_message(void);

/**
 * Initializes a network with default block widths.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum SdmixStatus sdmix_net_init(size_t channels,
                                size_t window_len,
                                size_t kernel_width,
                                size_t num_classes,
                                uint64_t seed,
                                struct SdmixNet **out);

/**
 * Loads a checkpoint written by the library or the CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum SdmixStatus sdmix_net_load(const char *path, struct SdmixNet **out);

/**
 * # Safety
 * `net` must be a live handle and `path` a NUL-terminated string.
 */
enum SdmixStatus sdmix_net_save(const struct SdmixNet *net, const char *path);

/**
 * Number of classes, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t sdmix_net_num_classes(const struct SdmixNet *net);

/**
 * Values per window (`channels × window_len`), or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t sdmix_net_input_len(const struct SdmixNet *net);

/**
 * Inference-mode logits for `n_windows` windows laid out row-major as
 * `(n_windows, channels, window_len)`. Writes `n_windows × num_classes`
 * values to `out`.
 *
 * # Safety
 * `x` must hold `n_windows × input_len` values and `out` must have room
 * for `out_len` values.
 */
enum SdmixStatus sdmix_net_logits(const struct SdmixNet *net,
                                  const double *x,
                                  size_t n_windows,
                                  double *out,
                                  size_t out_len);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `net` must be null or a handle not yet freed.
 */
void sdmix_net_free(struct SdmixNet *net);

/**
 * Range-weighted label weight for mixing weight `lambda`.
 *
 * # Safety
 * `t_out` must be writable; `degenerate_out` may be null.
 */
enum SdmixStatus sdmix_semantic_factor(double lambda,
                                       double r1,
                                       double r2,
                                       double *t_out,
                                       bool *degenerate_out);

/**
 * Runs every configured leave-one-domain-out experiment into `out_dir`.
 *
 * # Safety
 * Both arguments must be NUL-terminated strings.
 */
enum SdmixStatus sdmix_run_experiment(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SDMIX_H */
