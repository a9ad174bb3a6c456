#ifndef IAK_IAK_H
#define IAK_IAK_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define IAK_API __declspec(dllexport)
#elif defined(__GNUC__)
#define IAK_API __attribute__((visibility("default")))
#else
#define IAK_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum iak_status {
  IAK_OK = 0,
  IAK_ERR_INVALID_ARGUMENT = 1, /* null pointer, zero size, unknown name */
  IAK_ERR_CONFIG = 2,           /* malformed configuration or architecture */
  IAK_ERR_NUMERICAL = 3,        /* non-PSD covariance, failed factorization, non-finite values */
  IAK_ERR_IO = 4,               /* unreadable or malformed files */
  IAK_ERR_SHAPE = 5,            /* architecture cannot accept the inputs */
  IAK_ERR_INTERNAL = 6
} iak_status;

typedef enum iak_geometry_kind {
  IAK_GEOMETRY_VECTOR = 0,
  IAK_GEOMETRY_STRING = 1,
  IAK_GEOMETRY_IMAGE = 2
} iak_geometry_kind;

/* Spatial layout shared by every input passed in one call. STRING uses
 * `length`, IMAGE uses `height` x `width`, VECTOR has one position. */
typedef struct iak_geometry {
  iak_geometry_kind kind;
  size_t height;
  size_t width;
  size_t length;
} iak_geometry;

typedef enum iak_precision { IAK_PRECISION_F64 = 0, IAK_PRECISION_F32 = 1 } iak_precision;

typedef struct iak_architecture iak_architecture;
typedef struct iak_experiment iak_experiment;

IAK_API const char* iak_version(void);

/* Message of the last failed call on this thread; empty after success.
 * Valid until the next call on the same thread. */
IAK_API const char* iak_last_error(void);

IAK_API const char* iak_status_name(iak_status status);

/* Architecture from its JSON document ({"layers": [...]}). */
IAK_API iak_status iak_architecture_parse(const char* json, iak_architecture** out);
IAK_API void iak_architecture_free(iak_architecture* arch);

/* Infinite-width NNGP and NTK matrices of `n` inputs laid out row-major as
 * n x positions x channels, where positions is the geometry's size. Either
 * output may be NULL; each non-null output receives n x n doubles. */
IAK_API iak_status iak_kernel_matrix(const iak_architecture* arch, const double* inputs, size_t n, size_t channels,
                                     const iak_geometry* geometry, uint64_t seed, size_t threads, double* nngp_out,
                                     double* ntk_out);

/* K_test,train (K_train + lambda I)^-1 Y with K_train n_train x n_train,
 * K_test,train n_test x n_train and Y n_train x outputs, all row-major.
 * Writes n_test x outputs doubles. */
IAK_API iak_status iak_posterior_mean(const double* k_train, size_t n_train, const double* k_test_train,
                                      size_t n_test, const double* y, size_t outputs, double lambda, double* out);

/* Experiment from a JSON config file; dataset paths resolve against the
 * file's directory. */
IAK_API iak_status iak_experiment_load(const char* path, iak_experiment** out);
/* Same from a JSON string; base_dir may be NULL for the working directory. */
IAK_API iak_status iak_experiment_parse(const char* json, const char* base_dir, iak_experiment** out);
IAK_API void iak_experiment_free(iak_experiment* exp);

IAK_API iak_status iak_experiment_set_seed(iak_experiment* exp, uint64_t seed);
IAK_API iak_status iak_experiment_set_threads(iak_experiment* exp, size_t threads);
IAK_API iak_status iak_experiment_set_precision(iak_experiment* exp, iak_precision precision);
IAK_API iak_status iak_experiment_set_output(iak_experiment* exp, const char* dir);

/* Runs "kernel", "mc_sweep", "ntk_check" or "infer". NULL runs the command
 * named in the config. Results go to the output directory. */
IAK_API iak_status iak_experiment_run(iak_experiment* exp, const char* command);

#ifdef __cplusplus
}
#endif

#endif
