#include "iak/iak.h"

#include <cstring>
#include <exception>
#include <filesystem>
#include <new>
#include <string>
#include <utility>
#include <vector>

#include "common/error.hpp"
#include "gp/gp.hpp"
#include "io/commands.hpp"
#include "io/config.hpp"

#ifndef IAK_VERSION_STRING
#define IAK_VERSION_STRING "0.0.0"
#endif

struct iak_architecture {
  iak::Architecture rep;
};

struct iak_experiment {
  iak::ExperimentConfig rep;
};

namespace {

thread_local std::string last_error;

iak_status fail(iak_status status, const std::string& message) {
  last_error = message;
  return status;
}

struct InvalidArgument : std::exception {
  std::string message;
  explicit InvalidArgument(std::string m) : message(std::move(m)) {}
  const char* what() const noexcept override { return message.c_str(); }
};

// Runs fn, translating exceptions into status codes.
template <typename Fn>
iak_status guarded(Fn&& fn) {
  last_error.clear();
  try {
    fn();
    return IAK_OK;
  } catch (const InvalidArgument& e) {
    return fail(IAK_ERR_INVALID_ARGUMENT, e.what());
  } catch (const iak::ConfigError& e) {
    return fail(IAK_ERR_CONFIG, e.what());
  } catch (const iak::ShapeError& e) {
    return fail(IAK_ERR_SHAPE, e.what());
  } catch (const iak::NumericalError& e) {
    return fail(IAK_ERR_NUMERICAL, e.what());
  } catch (const iak::IoError& e) {
    return fail(IAK_ERR_IO, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(IAK_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(IAK_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(IAK_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(IAK_ERR_INTERNAL, "unknown error");
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw InvalidArgument(what);
}

iak::SpatialGeometry to_geometry(const iak_geometry& g) {
  switch (g.kind) {
    case IAK_GEOMETRY_VECTOR: return iak::SpatialGeometry::vector();
    case IAK_GEOMETRY_STRING:
      require(g.length > 0, "geometry length must be >= 1");
      return iak::SpatialGeometry::string(g.length);
    case IAK_GEOMETRY_IMAGE:
      require(g.height > 0 && g.width > 0, "geometry height and width must be >= 1");
      return iak::SpatialGeometry::image(g.height, g.width);
  }
  throw InvalidArgument("unknown geometry kind");
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

iak::Matrix read_rows(const double* data, std::size_t rows, std::size_t cols) {
  return Eigen::Map<const RowMajor>(data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void write_rows(const iak::Matrix& m, double* out) {
  Eigen::Map<RowMajor>(out, m.rows(), m.cols()) = m;
}

}  // namespace

extern "C" {

const char* iak_version(void) { return IAK_VERSION_STRING; }

const char* iak_last_error(void) { return last_error.c_str(); }

const char* iak_status_name(iak_status status) {
  switch (status) {
    case IAK_OK: return "ok";
    case IAK_ERR_INVALID_ARGUMENT: return "invalid argument";
    case IAK_ERR_CONFIG: return "config error";
    case IAK_ERR_NUMERICAL: return "numerical error";
    case IAK_ERR_IO: return "i/o error";
    case IAK_ERR_SHAPE: return "shape error";
    case IAK_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

iak_status iak_architecture_parse(const char* json, iak_architecture** out) {
  if (!json || !out) return fail(IAK_ERR_INVALID_ARGUMENT, "iak_architecture_parse: null argument");
  *out = nullptr;
  return guarded([&] { *out = new iak_architecture{iak::parse_architecture(json)}; });
}

void iak_architecture_free(iak_architecture* arch) { delete arch; }

iak_status iak_kernel_matrix(const iak_architecture* arch, const double* inputs, size_t n, size_t channels,
                             const iak_geometry* geometry, uint64_t seed, size_t threads, double* nngp_out,
                             double* ntk_out) {
  if (!arch || !inputs || !geometry) return fail(IAK_ERR_INVALID_ARGUMENT, "iak_kernel_matrix: null argument");
  if (n == 0 || channels == 0 || threads == 0)
    return fail(IAK_ERR_INVALID_ARGUMENT, "iak_kernel_matrix: n, channels and threads must be >= 1");
  return guarded([&] {
    const iak::SpatialGeometry g = to_geometry(*geometry);
    const std::size_t positions = g.size();
    std::vector<iak::KernelInput> xs(n);
    for (std::size_t i = 0; i < n; ++i)
      xs[i] = {read_rows(inputs + i * positions * channels, positions, channels), g};
    iak::EngineOptions opts;
    opts.seed = seed;
    opts.threads = threads;
    const iak::BatchKernels k = iak::propagate_batch(arch->rep, xs, opts);
    if (nngp_out) write_rows(k.nngp, nngp_out);
    if (ntk_out) write_rows(k.ntk, ntk_out);
  });
}

iak_status iak_posterior_mean(const double* k_train, size_t n_train, const double* k_test_train, size_t n_test,
                              const double* y, size_t outputs, double lambda, double* out) {
  if (!k_train || !k_test_train || !y || !out) return fail(IAK_ERR_INVALID_ARGUMENT, "iak_posterior_mean: null argument");
  if (n_train == 0 || n_test == 0 || outputs == 0)
    return fail(IAK_ERR_INVALID_ARGUMENT, "iak_posterior_mean: sizes must be >= 1");
  return guarded([&] {
    write_rows(iak::posterior_mean(read_rows(k_train, n_train, n_train), read_rows(k_test_train, n_test, n_train),
                                   read_rows(y, n_train, outputs), lambda),
               out);
  });
}

iak_status iak_experiment_load(const char* path, iak_experiment** out) {
  if (!path || !out) return fail(IAK_ERR_INVALID_ARGUMENT, "iak_experiment_load: null argument");
  *out = nullptr;
  return guarded([&] { *out = new iak_experiment{iak::load_config(path)}; });
}

iak_status iak_experiment_parse(const char* json, const char* base_dir, iak_experiment** out) {
  if (!json || !out) return fail(IAK_ERR_INVALID_ARGUMENT, "iak_experiment_parse: null argument");
  *out = nullptr;
  return guarded([&] { *out = new iak_experiment{iak::parse_config(json, base_dir ? base_dir : "")}; });
}

void iak_experiment_free(iak_experiment* exp) { delete exp; }

iak_status iak_experiment_set_seed(iak_experiment* exp, uint64_t seed) {
  if (!exp) return fail(IAK_ERR_INVALID_ARGUMENT, "iak_experiment_set_seed: null experiment");
  exp->rep.seed = seed;
  last_error.clear();
  return IAK_OK;
}

iak_status iak_experiment_set_threads(iak_experiment* exp, size_t threads) {
  if (!exp || threads == 0) return fail(IAK_ERR_INVALID_ARGUMENT, "iak_experiment_set_threads: threads must be >= 1");
  exp->rep.threads = threads;
  last_error.clear();
  return IAK_OK;
}

iak_status iak_experiment_set_precision(iak_experiment* exp, iak_precision precision) {
  if (!exp) return fail(IAK_ERR_INVALID_ARGUMENT, "iak_experiment_set_precision: null experiment");
  if (precision != IAK_PRECISION_F32 && precision != IAK_PRECISION_F64)
    return fail(IAK_ERR_INVALID_ARGUMENT, "iak_experiment_set_precision: unknown precision");
  exp->rep.precision = precision == IAK_PRECISION_F32 ? iak::Precision::F32 : iak::Precision::F64;
  last_error.clear();
  return IAK_OK;
}

iak_status iak_experiment_set_output(iak_experiment* exp, const char* dir) {
  if (!exp || !dir || !*dir) return fail(IAK_ERR_INVALID_ARGUMENT, "iak_experiment_set_output: empty directory");
  exp->rep.output = dir;
  last_error.clear();
  return IAK_OK;
}

iak_status iak_experiment_run(iak_experiment* exp, const char* command) {
  if (!exp) return fail(IAK_ERR_INVALID_ARGUMENT, "iak_experiment_run: null experiment");
  if (!command && !exp->rep.command)
    return fail(IAK_ERR_INVALID_ARGUMENT, "iak_experiment_run: no command given and none in the config");
  iak::Command c{};
  try {
    c = command ? iak::parse_command(command) : *exp->rep.command;
  } catch (const iak::ConfigError& e) {
    return fail(IAK_ERR_INVALID_ARGUMENT, std::string("iak_experiment_run: ") + e.what());
  }
  return guarded([&] { iak::run_command(c, exp->rep); });
}

}  // extern "C"
