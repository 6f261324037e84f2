/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef LDSA_H
#define LDSA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LdsaMechanism {
  LDSA_MECHANISM_SA = 0,
  LDSA_MECHANISM_DSA = 1,
  LDSA_MECHANISM_LDSA = 2,
} LdsaMechanism;

typedef enum LdsaStatus {
  LDSA_STATUS_OK = 0,
  LDSA_STATUS_NULL_POINTER = 1,
  LDSA_STATUS_INVALID_ARGUMENT = 2,
  LDSA_STATUS_SHAPE = 3,
  LDSA_STATUS_CAPACITY = 4,
  LDSA_STATUS_TOO_SHORT = 5,
  LDSA_STATUS_CONFIG = 6,
  LDSA_STATUS_PARSE = 7,
  LDSA_STATUS_IO = 8,
  LDSA_STATUS_NUMERICAL = 9,
  LDSA_STATUS_PANIC = 10,
} LdsaStatus;

// One attention layer (SA, DSA or LDSA) with its weights.
typedef struct LdsaAttention LdsaAttention;

// Full encoder: config plus weights.
typedef struct LdsaEncoder LdsaEncoder;

// Dense row-major `f64` matrix.
typedef struct LdsaMatrix LdsaMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL if none failed.
// The pointer stays valid until the next failing call on the same thread.
const char *ldsa_last_error_message(void);

// Copies `rows * cols` values from `data` (row-major) into a new matrix.
//
// # Safety
// `data` must point to `rows * cols` readable doubles; `out` must be writable.
enum LdsaStatus ldsa_matrix_new(size_t rows,
                                size_t cols,
                                const double *data,
                                struct LdsaMatrix **out);

// # Safety
// `m` must be NULL or a handle from this library that has not been freed.
void ldsa_matrix_free(struct LdsaMatrix *m);

// # Safety
// `m` must be a live matrix handle.
size_t ldsa_matrix_rows(const struct LdsaMatrix *m);

// # Safety
// `m` must be a live matrix handle.
size_t ldsa_matrix_cols(const struct LdsaMatrix *m);

// Copies the matrix into `dst`, which must hold at least `rows * cols` values.
//
// # Safety
// `m` must be a live matrix handle and `dst` must point to `len` writable doubles.
enum LdsaStatus ldsa_matrix_copy_data(const struct LdsaMatrix *m, double *dst, size_t len);

// New Xavier-initialized attention layer. `context` is used by LDSA (odd)
// and `t_max` by DSA; both are ignored otherwise.
//
// # Safety
// `out` must be writable.
enum LdsaStatus ldsa_attention_new(enum LdsaMechanism mechanism,
                                   size_t d,
                                   size_t heads,
                                   size_t context,
                                   size_t t_max,
                                   uint64_t seed,
                                   struct LdsaAttention **out);

// # Safety
// `layer` must be NULL or a live attention handle.
void ldsa_attention_free(struct LdsaAttention *layer);

// `y = layer(x)` for a `T × d` input. The optional `weights_out` receives
// the attention weights of head `head` (`T × T` for SA/DSA, `T × c` for LDSA).
//
// # Safety
// Handles must be live; `y_out` must be writable; `weights_out` may be NULL.
enum LdsaStatus ldsa_attention_forward(const struct LdsaAttention *layer,
                                       const struct LdsaMatrix *x,
                                       struct LdsaMatrix **y_out,
                                       size_t head,
                                       struct LdsaMatrix **weights_out);

// # Safety
// `layer` must be live and `dir` a NUL-terminated path.
enum LdsaStatus ldsa_attention_save(const struct LdsaAttention *layer, const char *dir);

// # Safety
// `dir` must be a NUL-terminated path and `out` writable.
enum LdsaStatus ldsa_attention_load(const char *dir, struct LdsaAttention **out);

// New encoder from an EncoderConfig JSON string with freshly initialized weights.
//
// # Safety
// `config_json` must be NUL-terminated and `out` writable.
enum LdsaStatus ldsa_encoder_new(const char *config_json, uint64_t seed, struct LdsaEncoder **out);

// # Safety
// `dir` must be a NUL-terminated path and `out` writable.
enum LdsaStatus ldsa_encoder_load(const char *dir, struct LdsaEncoder **out);

// # Safety
// `encoder` must be live and `dir` a NUL-terminated path.
enum LdsaStatus ldsa_encoder_save(const struct LdsaEncoder *encoder, const char *dir);

// # Safety
// `encoder` must be NULL or a live encoder handle.
void ldsa_encoder_free(struct LdsaEncoder *encoder);

// Encodes a `T × feat_dim` feature matrix into `T' × d`.
//
// # Safety
// Handles must be live and `y_out` writable.
enum LdsaStatus ldsa_encoder_forward(const struct LdsaEncoder *encoder,
                                     const struct LdsaMatrix *features,
                                     struct LdsaMatrix **y_out);

// Whole-encoder parameter totals for an EncoderConfig JSON string.
// `weights_out` excludes biases and norm parameters; `total_out` includes them.
// Either output may be NULL.
//
// # Safety
// `config_json` must be NUL-terminated; non-NULL outputs must be writable.
enum LdsaStatus ldsa_count_params(const char *config_json,
                                  uint64_t *weights_out,
                                  uint64_t *total_out);

// Full parameter table as a JSON string; release it with [`ldsa_string_free`].
//
// # Safety
// `config_json` must be NUL-terminated and `out` writable.
enum LdsaStatus ldsa_param_table_json(const char *config_json, char **out);

// # Safety
// `s` must be NULL or a string returned by this library that has not been freed.
void ldsa_string_free(char *s);

// `scale · d^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
double ldsa_noam_lr(uint64_t step, uint64_t d_model, uint64_t warmup, double scale);

// Version string of the library, statically allocated.
const char *ldsa_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LDSA_H */
