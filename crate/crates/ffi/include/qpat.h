#ifndef QPAT_H
#define QPAT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum QpatStatus {
  QPAT_STATUS_OK = 0,
  QPAT_STATUS_NULL_POINTER = 1,
  QPAT_STATUS_INVALID_ARGUMENT = 2,
  QPAT_STATUS_CONFIG = 3,
  QPAT_STATUS_INTEGRITY = 4,
  QPAT_STATUS_NUMERICAL = 5,
  QPAT_STATUS_IO = 6,
  QPAT_STATUS_BUFFER_TOO_SMALL = 7,
  QPAT_STATUS_PANIC = 8,
} QpatStatus;

// Reconstruction pipeline.
typedef enum QpatMethod {
  QPAT_METHOD_SINGLE_STAGE = 0,
  QPAT_METHOD_TWO_STAGE = 1,
} QpatMethod;

// Experiment configuration.
typedef struct QpatConfig QpatConfig;

// Nodal field on a uniform mesh.
typedef struct QpatField QpatField;

// Pressure samples on the detector arc.
typedef struct QpatPressure QpatPressure;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the terminator.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t qpat_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *qpat_version(void);

// Default configuration.
//
// # Safety
// `out` must be valid for writes.
enum QpatStatus qpat_config_default(struct QpatConfig **out);

// Parses a `key = value` config file.
//
// # Safety
// `path` must be a NUL-terminated string, `out` valid for writes.
enum QpatStatus qpat_config_load(const char *path, struct QpatConfig **out);

// Overrides mesh resolutions and sampling counts.
//
// # Safety
// `cfg` must be a live handle.
enum QpatStatus qpat_config_set_sizes(struct QpatConfig *cfg,
                                      size_t sim_n,
                                      size_t inv_n,
                                      size_t n_angles,
                                      size_t n_detectors,
                                      size_t n_times);

// Sets the number of proximal-gradient iterations.
//
// # Safety
// `cfg` must be a live handle.
enum QpatStatus qpat_config_set_iterations(struct QpatConfig *cfg, size_t iters);

// # Safety
// `cfg` must be null or a handle not yet freed.
void qpat_config_free(struct QpatConfig *cfg);

// Simulates clean pressure data for the standard phantom and returns the
// true absorption coefficient on the inversion mesh.
//
// # Safety
// `cfg` must be a live handle; `data` and `truth` valid for writes.
enum QpatStatus qpat_simulate(const struct QpatConfig *cfg,
                              struct QpatPressure **data,
                              struct QpatField **truth);

// Adds Gaussian noise with standard deviation `level * max|v|`.
//
// # Safety
// `data` must be a live handle, `out` valid for writes.
enum QpatStatus qpat_pressure_add_noise(const struct QpatPressure *data,
                                        double level,
                                        uint64_t seed,
                                        struct QpatPressure **out);

// Number of samples, `n_detectors * n_times`; 0 for a null handle.
//
// # Safety
// `data` must be null or a live handle.
size_t qpat_pressure_len(const struct QpatPressure *data);

// Copies the samples (detector-major) into `buf`.
//
// # Safety
// `data` must be a live handle and `buf` valid for `len` doubles.
enum QpatStatus qpat_pressure_copy(const struct QpatPressure *data, double *buf, size_t len);

// # Safety
// `data` must be a live handle, `path` a NUL-terminated string.
enum QpatStatus qpat_pressure_save(const struct QpatPressure *data, const char *path);

// # Safety
// `path` must be a NUL-terminated string, `out` valid for writes.
enum QpatStatus qpat_pressure_load(const char *path, struct QpatPressure **out);

// # Safety
// `data` must be null or a handle not yet freed.
void qpat_pressure_free(struct QpatPressure *data);

// Reconstructs the absorption coefficient on the inversion mesh.
//
// # Safety
// `cfg` and `data` must be live handles, `out` valid for writes.
enum QpatStatus qpat_reconstruct(const struct QpatConfig *cfg,
                                 const struct QpatPressure *data,
                                 enum QpatMethod method,
                                 struct QpatField **out);

// Number of nodal values; 0 for a null handle.
//
// # Safety
// `field` must be null or a live handle.
size_t qpat_field_len(const struct QpatField *field);

// Copies the nodal values into `buf`.
//
// # Safety
// `field` must be a live handle and `buf` valid for `len` doubles.
enum QpatStatus qpat_field_copy(const struct QpatField *field, double *buf, size_t len);

// Relative `L^2` error of `recon` against `truth`.
//
// # Safety
// `recon` and `truth` must be live handles, `out` valid for writes.
enum QpatStatus qpat_field_relative_error(const struct QpatField *recon,
                                          const struct QpatField *truth,
                                          double *out);

// # Safety
// `field` must be null or a handle not yet freed.
void qpat_field_free(struct QpatField *field);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QPAT_H */
