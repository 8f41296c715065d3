#ifndef MVSCALE_H
#define MVSCALE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. The numeric values of `MVS_STATUS_VALIDATION`,
// `MVS_STATUS_NUMERICAL` and `MVS_STATUS_REPLAY_MISMATCH` equal the exit
// codes of the `mvscale` binary.
typedef enum MvsStatus {
  MVS_STATUS_OK = 0,
  MVS_STATUS_NULL_POINTER = 1,
  MVS_STATUS_VALIDATION = 2,
  MVS_STATUS_NUMERICAL = 3,
  MVS_STATUS_REPLAY_MISMATCH = 4,
  MVS_STATUS_PANIC = 5,
} MvsStatus;

// Opaque particle ensemble.
typedef struct MvsEnsemble MvsEnsemble;

// Opaque model built from a JSON model description.
typedef struct MvsModel MvsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *mvs_version(void);

// Message of the last failed call on this thread, or NULL. Valid until the
// next call into the library on the same thread.
const char *mvs_last_error_message(void);

// Releases a string returned by the library.
//
// # Safety
// `s` must be NULL or a string returned by this library, freed once.
void mvs_string_free(char *s);

// Copies `dim * count` row-major values into a new ensemble.
//
// # Safety
// `data` must point to `dim * count` readable doubles; `out` must be writable.
enum MvsStatus mvs_ensemble_new(size_t dim,
                                size_t count,
                                const double *data,
                                struct MvsEnsemble **out);

// # Safety
// `e` must be NULL or a handle from this library, freed once.
void mvs_ensemble_free(struct MvsEnsemble *e);

// Dimension of each particle; 0 for NULL.
//
// # Safety
// `e` must be NULL or a live handle.
size_t mvs_ensemble_dim(const struct MvsEnsemble *e);

// Number of particles; 0 for NULL.
//
// # Safety
// `e` must be NULL or a live handle.
size_t mvs_ensemble_count(const struct MvsEnsemble *e);

// Copies the particles into `out`, which holds `len >= dim * count` doubles.
//
// # Safety
// `e` must be a live handle and `out` must have room for `len` doubles.
enum MvsStatus mvs_ensemble_copy(const struct MvsEnsemble *e, double *out, size_t len);

// Wasserstein-2 distance between two ensembles. `approximate` is set when
// the sliced estimator was used.
//
// # Safety
// Handles must be live; `value` and `approximate` must be writable.
enum MvsStatus mvs_wasserstein2(const struct MvsEnsemble *a,
                                const struct MvsEnsemble *b,
                                double *value,
                                bool *approximate);

// Builds a model from a JSON description such as
// `{"name": "linear", "a": 1, "c": 1, "k": 1, "s": 1}`.
//
// # Safety
// `spec_json` must be a NUL-terminated string; `out` must be writable.
enum MvsStatus mvs_model_from_json(const char *spec_json, struct MvsModel **out);

// # Safety
// `m` must be NULL or a handle from this library, freed once.
void mvs_model_free(struct MvsModel *m);

// Slow, fast and noise dimensions of a model.
//
// # Safety
// `m` must be a live handle; the outputs must be writable.
enum MvsStatus mvs_model_dims(const struct MvsModel *m,
                              size_t *slow,
                              size_t *fast,
                              size_t *slow_noise,
                              size_t *fast_noise);

// Simulates replication `rep` from `(slow0, fast0)` and returns the terminal
// ensembles. `time_scales_json` and `sim_json` use the experiment config
// schema.
//
// # Safety
// Handles must be live, strings NUL-terminated, outputs writable.
enum MvsStatus mvs_simulate(const struct MvsModel *m,
                            const struct MvsEnsemble *slow0,
                            const struct MvsEnsemble *fast0,
                            const char *time_scales_json,
                            const char *sim_json,
                            uint64_t rep,
                            struct MvsEnsemble **out_slow,
                            struct MvsEnsemble **out_fast);

// Invariant ensemble of the frozen fast dynamics at slow law `mu`.
// `config_json` may be NULL for the defaults.
//
// # Safety
// Handles must be live; `config_json` NULL or NUL-terminated; `out` writable.
enum MvsStatus mvs_invariant_measure(const struct MvsModel *m,
                                     const struct MvsEnsemble *mu,
                                     const char *config_json,
                                     bool *converged,
                                     struct MvsEnsemble **out);

// Runs an experiment config and writes its artifacts to `out_dir` (NULL
// uses the config's directory). On success `summary_json` receives the
// summary, to be released with [`mvs_string_free`].
//
// # Safety
// Strings must be NUL-terminated (or NULL where allowed); `summary_json`
// must be writable.
enum MvsStatus mvs_experiment_run(const char *config_json,
                                  const char *out_dir,
                                  size_t threads,
                                  char **summary_json);

// Replays a recorded summary. Returns `MVS_STATUS_REPLAY_MISMATCH` when an
// artifact differs; the error message names the file and byte offset.
//
// # Safety
// `summary_path` must be NUL-terminated.
enum MvsStatus mvs_experiment_replay(const char *summary_path, size_t threads);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MVSCALE_H */
