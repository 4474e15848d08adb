#ifndef COTSIM_H
#define COTSIM_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CotsimStatus {
  COTSIM_STATUS_OK = 0,
  COTSIM_STATUS_NULL_POINTER = 1,
  COTSIM_STATUS_INVALID_ARGUMENT = 2,
  COTSIM_STATUS_DIMENSION_INFEASIBLE = 3,
  COTSIM_STATUS_INFEASIBLE_PARAMETERS = 4,
  COTSIM_STATUS_SHAPE_MISMATCH = 5,
  COTSIM_STATUS_NUMERICAL = 6,
  COTSIM_STATUS_IO = 7,
  COTSIM_STATUS_BUFFER_TOO_SMALL = 8,
  COTSIM_STATUS_PANIC = 9,
} CotsimStatus;

/**
 * Orthonormal reasoning and testing patterns plus positional encodings.
 */
typedef struct CotsimBasis CotsimBasis;

/**
 * One-layer single-head attention model.
 */
typedef struct CotsimModel CotsimModel;

/**
 * Cyclic reasoning task with its noisy step matrices.
 */
typedef struct CotsimTransition CotsimTransition;

/**
 * Summary statistics of a transition model.
 */
typedef struct CotsimStats {
  double tau;
  double tau_o;
  double rho;
  double rho_o;
  /**
   * 1 if the most probable K-step output is correct for every input.
   */
  int condition1_holds;
} CotsimStats;

/**
 * Parameters of a Monte-Carlo error estimate.
 */
typedef struct CotsimEvalParams {
  size_t n_queries;
  size_t l_ts;
  double alpha_prime;
  double noise;
  uint64_t seed;
} CotsimEvalParams;

/**
 * Mean error and its binomial standard error.
 */
typedef struct CotsimErrorEstimate {
  double mean;
  double std_error;
  size_t ties;
} CotsimErrorEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cotsim_version(void);

/**
 * Copy the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t cotsim_last_error(char *buf, size_t len);

/**
 * Build a basis with `m` reasoning patterns and `m_prime` testing patterns in
 * dimension `dim` for `k`-step tasks.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum CotsimStatus cotsim_basis_new(size_t dim,
                                   size_t m,
                                   size_t k,
                                   size_t m_prime,
                                   uint64_t seed,
                                   struct CotsimBasis **out);

/**
 * # Safety
 * `basis` must be null or a handle from [`cotsim_basis_new`] not yet freed.
 */
void cotsim_basis_free(struct CotsimBasis *basis);

/**
 * Read the basis sizes. Any output pointer may be null.
 *
 * # Safety
 * `basis` must be a live handle; the outputs null or writable.
 */
enum CotsimStatus cotsim_basis_dims(const struct CotsimBasis *basis,
                                    size_t *dim,
                                    size_t *m,
                                    size_t *m_prime,
                                    size_t *k);

/**
 * Model with `W` drawn i.i.d. `N(0, xi²)` of size `2·dim × 2·dim`.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum CotsimStatus cotsim_model_init(size_t dim, double xi, uint64_t seed, struct CotsimModel **out);

/**
 * Load a JSON checkpoint written by the CLI or [`cotsim_model_save`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` writable.
 */
enum CotsimStatus cotsim_model_load(const char *path, struct CotsimModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum CotsimStatus cotsim_model_save(const struct CotsimModel *model,
                                    size_t k,
                                    uint64_t basis_seed,
                                    const char *path);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
void cotsim_model_free(struct CotsimModel *model);

/**
 * Copy `W` row-major into `buf`, which must hold `len ≥ (2·dim)²` doubles.
 * With a null `buf` only `needed` is written.
 *
 * # Safety
 * `model` must be live, `buf` null or valid for `len` doubles, `needed`
 * null or writable.
 */
enum CotsimStatus cotsim_model_weights(const struct CotsimModel *model,
                                       double *buf,
                                       size_t len,
                                       size_t *needed);

/**
 * Transition model for the cyclic task of `perm` (length `n`, 0-based)
 * over `k` steps, with trajectory accuracy `tau` and primacy `rho`.
 * `coherent = 1` aligns the runner-up columns so single-step errors share
 * one wrong final label.
 *
 * # Safety
 * `perm` must be valid for `n` entries; `out` writable.
 */
enum CotsimStatus cotsim_transition_new(const size_t *perm,
                                        size_t n,
                                        size_t k,
                                        double tau,
                                        double rho,
                                        int coherent,
                                        uint64_t seed,
                                        struct CotsimTransition **out);

/**
 * # Safety
 * `t` must be null or a live handle.
 */
void cotsim_transition_free(struct CotsimTransition *t);

/**
 * # Safety
 * `t` must be live and `out` writable.
 */
enum CotsimStatus cotsim_transition_stats(const struct CotsimTransition *t,
                                          struct CotsimStats *out);

/**
 * `c · (α'·τ·ρ)⁻² · log M` testing examples for CoT.
 *
 * # Safety
 * `out` must be writable.
 */
enum CotsimStatus cotsim_cot_bound(double alpha_prime,
                                   double tau,
                                   double rho,
                                   size_t m,
                                   double constant,
                                   double *out);

/**
 * `c · (α'·τ_o·ρ_o)⁻² · log M` testing examples for ICL.
 *
 * # Safety
 * `out` must be writable.
 */
enum CotsimStatus cotsim_icl_bound(double alpha_prime,
                                   double tau_o,
                                   double rho_o,
                                   size_t m,
                                   double constant,
                                   double *out);

/**
 * Monte-Carlo CoT error of `model` on prompts built from `t`.
 *
 * # Safety
 * All handles must be live; `params` readable and `out` writable.
 */
enum CotsimStatus cotsim_cot_error(const struct CotsimModel *model,
                                   const struct CotsimBasis *basis,
                                   const struct CotsimTransition *t,
                                   const struct CotsimEvalParams *params,
                                   struct CotsimErrorEstimate *out);

/**
 * Monte-Carlo ICL error of `model` on prompts built from `t`.
 *
 * # Safety
 * All handles must be live; `params` readable and `out` writable.
 */
enum CotsimStatus cotsim_icl_error(const struct CotsimModel *model,
                                   const struct CotsimBasis *basis,
                                   const struct CotsimTransition *t,
                                   const struct CotsimEvalParams *params,
                                   struct CotsimErrorEstimate *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COTSIM_H */
