#ifndef FRACRITZ_H
#define FRACRITZ_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Ansatz selector for [`frz_model_new`].
typedef enum FrzAnsatz {
  FRZ_ANSATZ_SPECIAL = 0,
  FRZ_ANSATZ_SIMPLE = 1,
} FrzAnsatz;

// Result of every fallible call.
typedef enum FrzStatus {
  FRZ_STATUS_OK = 0,
  FRZ_STATUS_NULL_POINTER = 1,
  FRZ_STATUS_INVALID_ARGUMENT = 2,
  FRZ_STATUS_CONFIG = 3,
  FRZ_STATUS_CHECKPOINT = 4,
  FRZ_STATUS_NUMERICAL = 5,
  FRZ_STATUS_IO = 6,
  FRZ_STATUS_PANIC = 7,
} FrzStatus;

// Trained or freshly initialized network bound to its problem.
typedef struct FrzModel FrzModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Length in bytes of the last error message on this thread, excluding the
// terminating NUL; 0 when the last call succeeded.
size_t frz_last_error_length(void);

// Copies the last error message into `buf` (NUL terminated, truncated to
// `len − 1` bytes). Returns the number of bytes written without the NUL.
//
// # Safety
// `buf` must be valid for `len` bytes or null.
size_t frz_last_error_message(char *buf, size_t len);

// NUL-terminated crate version; static storage.
const char *frz_version(void);

// Number of sinc nodes for fraction `s` and step `h_bar`.
//
// # Safety
// `out` must be valid for one write.
enum FrzStatus frz_sinc_node_count(double s, double h_bar, size_t *out);

// Seeded initialization on `(−1, 1)^dim` with the sine-product source.
//
// # Safety
// `out` must be valid for one write.
enum FrzStatus frz_model_new(enum FrzAnsatz kind,
                             size_t depth,
                             size_t width,
                             size_t dim,
                             double s,
                             uint64_t seed,
                             struct FrzModel **out);

// Loads a checkpoint written by `solve` or [`frz_model_save`]; the config
// supplies the problem and must agree with the stored shape.
//
// # Safety
// Paths must be NUL-terminated strings; `out` must be valid for one write.
enum FrzStatus frz_model_load(const char *config_path,
                              const char *checkpoint_path,
                              struct FrzModel **out);

// Trains from the config at `config_path`; `seed < 0` keeps the config's
// seed. `model_out` and `error_out` may be null. `error_out` receives NaN
// when the problem has no closed-form solution.
//
// # Safety
// `config_path` must be a NUL-terminated string; non-null outputs must be
// valid for one write.
enum FrzStatus frz_solve(const char *config_path,
                         int64_t seed,
                         struct FrzModel **model_out,
                         double *error_out);

// Writes the model's parameters as a checkpoint.
//
// # Safety
// `model` must come from this library; `path` must be a NUL-terminated
// string.
enum FrzStatus frz_model_save(const struct FrzModel *model, const char *path);

// Spatial dimension `d`.
//
// # Safety
// `model` must come from this library; `out` must be valid for one write.
enum FrzStatus frz_model_dim(const struct FrzModel *model, size_t *out);

// Total number of trainable scalars.
//
// # Safety
// `model` must come from this library; `out` must be valid for one write.
enum FrzStatus frz_model_param_count(const struct FrzModel *model, size_t *out);

// `φ(x, y)` at one point; `x` holds `dim` coordinates.
//
// # Safety
// `model` must come from this library; `x` must hold `dim` values; `out`
// must be valid for one write.
enum FrzStatus frz_model_eval(const struct FrzModel *model,
                              const double *x,
                              size_t dim,
                              double y,
                              double *out);

// Traces `φ(x, 0)` at `count` points stored row-major in `xs`
// (`count · dim` values), written to `out` (`count` values).
//
// # Safety
// `model` must come from this library; `xs` and `out` must hold the stated
// number of values.
enum FrzStatus frz_model_trace(const struct FrzModel *model,
                               const double *xs,
                               size_t count,
                               size_t dim,
                               double *out);

// Learned decay rates `(γ′, γ″)`; `(0.5, 0.5)` for the simple ansatz.
//
// # Safety
// `model` must come from this library; outputs must be valid for one write.
enum FrzStatus frz_model_decay_rates(const struct FrzModel *model, double *g1, double *g2);

// Relative `ℓ²` trace error against the closed-form solution on `points`
// uniform test points drawn with `seed`.
//
// # Safety
// `model` must come from this library; `out` must be valid for one write.
enum FrzStatus frz_model_error(const struct FrzModel *model,
                               size_t points,
                               uint64_t seed,
                               double *out);

// Releases a model; null is a no-op.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void frz_model_free(struct FrzModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRACRITZ_H */
