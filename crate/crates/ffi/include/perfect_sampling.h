#ifndef PERFECT_SAMPLING_H
#define PERFECT_SAMPLING_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum PsStatus {
  PS_STATUS_OK = 0,
  PS_STATUS_NULL_POINTER = 1,
  PS_STATUS_INVALID_ARGUMENT = 2,
  PS_STATUS_CAP_BREACH = 3,
  PS_STATUS_ORACLE_UNAVAILABLE = 4,
  PS_STATUS_UNSUPPORTED = 5,
  PS_STATUS_INTERNAL = 6,
  PS_STATUS_PANIC = 7,
} PsStatus;

/**
 * Sampler selector for [`ps_sample`] and [`ps_sample_many`].
 */
typedef enum PsSampler {
  PS_SAMPLER_CFTP_BRUTEFORCE = 0,
  PS_SAMPLER_CFTP_MONOTONE = 1,
  PS_SAMPLER_CFTP_BOUNDING = 2,
  PS_SAMPLER_FILL = 3,
} PsSampler;

/**
 * Opaque model handle.
 */
typedef struct PsModel PsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Ladder walk on {0.25, 0.5, 2, 4} moving up with probability `p`.
 *
 * # Safety
 * `out` must be null or point to writable storage for one pointer.
 */
enum PsStatus ps_model_ladder_new(double p, struct PsModel **out);

/**
 * Non-monotone three-state walk with parameter `p`.
 *
 * # Safety
 * `out` must be null or point to writable storage for one pointer.
 */
enum PsStatus ps_model_walk3_new(double p, struct PsModel **out);

/**
 * Ising model on a `side × side` grid; draws report `|m|` per site.
 *
 * # Safety
 * `out` must be null or point to writable storage for one pointer.
 */
enum PsStatus ps_model_ising_new(uint32_t side, double beta, struct PsModel **out);

/**
 * Slice chain for `exp(-y)` truncated to `(0, c)`.
 *
 * # Safety
 * `out` must be null or point to writable storage for one pointer.
 */
enum PsStatus ps_model_trunc_exp_new(double c, struct PsModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from `ps_model_*_new` not yet freed.
 */
void ps_model_free(struct PsModel *model);

/**
 * One exact draw on replicate stream `replicate`. `depth_cap` of 0 selects
 * the default cap; otherwise it must be a power of two.
 *
 * # Safety
 * `model` must be a live handle and `out` writable for one `double`.
 */
enum PsStatus ps_sample(const struct PsModel *model,
                        enum PsSampler sampler,
                        uint64_t seed,
                        uint64_t replicate,
                        uint64_t depth_cap,
                        double *out);

/**
 * Draws on replicates `0..n` into `out[0..n]`. On failure the contents of
 * `out` are unspecified.
 *
 * # Safety
 * `model` must be a live handle and `out` writable for `n` doubles.
 */
enum PsStatus ps_sample_many(const struct PsModel *model,
                             enum PsSampler sampler,
                             uint64_t seed,
                             size_t n,
                             uint64_t depth_cap,
                             double *out);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length excluding the NUL,
 * or 0 when no error has been recorded.
 *
 * # Safety
 * `buf` must be null or writable for `len` bytes.
 */
size_t ps_last_error_message(char *buf, size_t len);

/**
 * Static, NUL-terminated name of a status code.
 */
const char *ps_status_name(enum PsStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PERFECT_SAMPLING_H */
