#include "io/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "common/error.hpp"
#include "common/parallel.hpp"
#include "finite/empirical.hpp"
#include "finite/finite_net.hpp"
#include "gp/gp.hpp"
#include "io/tensor_io.hpp"
#include "json.hpp"

namespace iak {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.output);
  return (fs::path(cfg.output) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw IoError("cannot write " + path);
}

// Shortest text that round-trips the double.
std::string fmt(double v) {
  char buf[32];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

EngineOptions engine_options(const ExperimentConfig& cfg) {
  EngineOptions o;
  o.input_ntk = cfg.input_ntk;
  o.seed = cfg.seed;
  o.threads = cfg.threads;
  return o;
}

DType out_dtype(const ExperimentConfig& cfg) { return cfg.precision == Precision::F32 ? DType::F32 : DType::F64; }

std::vector<KernelInput> first_inputs(const DatasetBundle& data, std::size_t n) {
  if (n == 0) return data.inputs;
  if (n > data.inputs.size())
    throw ConfigError("n_inputs " + std::to_string(n) + " exceeds the dataset size " +
                      std::to_string(data.inputs.size()));
  return {data.inputs.begin(), data.inputs.begin() + static_cast<long>(n)};
}

template <typename Fn>
std::vector<std::string> with_context(const char* command, Fn&& fn) {
  const std::string prefix = std::string(command) + ": ";
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(prefix + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(prefix + e.what());
  } catch (const IoError& e) {
    throw IoError(prefix + e.what());
  } catch (const Error& e) {
    throw Error(prefix + e.what());
  } catch (const fs::filesystem_error& e) {
    throw IoError(prefix + e.what());
  }
}

json kernel_stats(const Matrix& k) {
  return {{"trace", k.trace()}, {"diag_min", k.diagonal().minCoeff()}, {"diag_max", k.diagonal().maxCoeff()}};
}

}  // namespace

std::vector<std::string> run_kernel(const ExperimentConfig& cfg) {
  return with_context("kernel", [&] {
    const DatasetBundle data = load_dataset(cfg.dataset, cfg.base_dir);
    const BatchKernels k = propagate_batch(cfg.architecture, data.inputs, engine_options(cfg));
    const std::string nngp = out_path(cfg, "nngp.iak"), ntk = out_path(cfg, "ntk.iak");
    write_tensor(nngp, matrix_tensor(k.nngp, out_dtype(cfg)));
    write_tensor(ntk, matrix_tensor(k.ntk, out_dtype(cfg)));
    json summary = {{"command", "kernel"},
                    {"n_inputs", data.inputs.size()},
                    {"precision", cfg.precision == Precision::F32 ? "f32" : "f64"},
                    {"seed", cfg.seed},
                    {"files", {"nngp.iak", "ntk.iak"}},
                    {"nngp", kernel_stats(k.nngp)},
                    {"ntk", kernel_stats(k.ntk)}};
    const std::string s = out_path(cfg, "summary.json");
    write_text(s, summary.dump(2) + "\n");
    return std::vector<std::string>{nngp, ntk, s};
  });
}

std::vector<std::string> run_mc_sweep(const ExperimentConfig& cfg) {
  return with_context("mc_sweep", [&] {
    const McSweepConfig& mc = cfg.mc_sweep;
    const DatasetBundle data = load_dataset(cfg.dataset, cfg.base_dir);
    const auto inputs = first_inputs(data, mc.sizes.n_inputs);
    const Matrix exact = propagate_batch(cfg.architecture, inputs, engine_options(cfg)).nngp;
    const InputStack stack = stack_inputs(inputs);
    const auto seeds = mc.sizes.resolved_seeds(cfg.seed);

    std::string csv = "width,n_samples,seed,log_distance\n";
    for (std::size_t width : mc.sizes.widths) {
      const FiniteWidthSpec spec = mc.sizes.spec(width);
      std::vector<std::vector<double>> dist(seeds.size());
      for (std::size_t s = 0; s < seeds.size(); ++s) {
        EmpiricalOptions o;
        o.seed = seeds[s];
        o.threads = cfg.threads;
        o.precision = cfg.precision;
        o.sampler = mc.sampler;
        for (const auto& est : empirical_nngp_prefixes(cfg.architecture, spec, stack, mc.sample_counts, o))
          dist[s].push_back(kernel_distance(est.mean, exact));
      }
      for (std::size_t c = 0; c < mc.sample_counts.size(); ++c)
        for (std::size_t s = 0; s < seeds.size(); ++s)
          csv += std::to_string(width) + "," + std::to_string(mc.sample_counts[c]) + "," +
                 std::to_string(seeds[s]) + "," + fmt(dist[s][c]) + "\n";
    }
    const std::string path = out_path(cfg, "mc_sweep.csv");
    write_text(path, csv);
    return std::vector<std::string>{path};
  });
}

std::vector<std::string> run_ntk_check(const ExperimentConfig& cfg) {
  return with_context("ntk_check", [&] {
    const FiniteSizes& sizes = cfg.ntk_check.sizes;
    const DatasetBundle data = load_dataset(cfg.dataset, cfg.base_dir);
    const auto inputs = first_inputs(data, sizes.n_inputs);
    const Matrix exact = propagate_batch(cfg.architecture, inputs, engine_options(cfg)).ntk;
    const InputStack stack = stack_inputs(inputs);
    const auto seeds = sizes.resolved_seeds(cfg.seed);
    const auto d0 = static_cast<std::size_t>(stack.rows.cols());

    struct Job {
      std::size_t width;
      std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (std::size_t w : sizes.widths)
      for (std::uint64_t s : seeds) jobs.push_back({w, s});
    std::vector<double> err(jobs.size());
    parallel_for(jobs.size(), cfg.threads, [&](std::size_t i) {
      const auto params = sample_params(cfg.architecture, sizes.spec(jobs[i].width), stack.geometry[0], d0,
                                        jobs[i].seed);
      err[i] = relative_frobenius_error(empirical_ntk(params, stack), exact);
    });

    std::string csv = "width,seed,rel_error\n";
    for (std::size_t i = 0; i < jobs.size(); ++i)
      csv += std::to_string(jobs[i].width) + "," + std::to_string(jobs[i].seed) + "," + fmt(err[i]) + "\n";
    const std::string path = out_path(cfg, "ntk_check.csv");
    write_text(path, csv);
    return std::vector<std::string>{path};
  });
}

std::vector<std::string> run_infer(const ExperimentConfig& cfg) {
  return with_context("infer", [&] {
    const SplitSizes& sp = cfg.split;
    if (sp.train == 0 || sp.validation == 0 || sp.test == 0)
      throw ConfigError("split.train, split.validation and split.test must all be >= 1");
    const DatasetBundle data = load_dataset(cfg.dataset, cfg.base_dir);
    const std::size_t n = sp.train + sp.validation + sp.test;
    if (n > data.inputs.size())
      throw ConfigError("split sizes add up to " + std::to_string(n) + " but the dataset has " +
                        std::to_string(data.inputs.size()) + " examples");
    if (data.labels.empty()) throw ConfigError("dataset.labels is required");
    const int classes = cfg.classes > 0 ? cfg.classes : data.classes;

    const std::vector<KernelInput> inputs(data.inputs.begin(), data.inputs.begin() + static_cast<long>(n));
    const BatchKernels k = propagate_batch(cfg.architecture, inputs, engine_options(cfg));

    const auto tr = static_cast<Eigen::Index>(sp.train);
    const auto va = static_cast<Eigen::Index>(sp.validation);
    const auto te = static_cast<Eigen::Index>(sp.test);
    const std::vector<int> train_labels(data.labels.begin(), data.labels.begin() + tr);
    const std::vector<int> val_labels(data.labels.begin() + tr, data.labels.begin() + tr + va);
    const std::vector<int> test_labels(data.labels.begin() + tr + va, data.labels.begin() + tr + va + te);
    const Matrix y = encode_targets(train_labels, classes).y;

    auto evaluate = [&](const Matrix& kernel) -> json {
      const Matrix k_train = kernel.topLeftCorner(tr, tr);
      const RegularizerChoice choice =
          select_regularizer(k_train, kernel.block(tr, 0, va, tr), y, val_labels, regularizer_grid(k_train));
      const Matrix pred = posterior_mean(k_train, kernel.block(tr + va, 0, te, tr), y, choice.lambda);
      return {{"lambda", choice.lambda},
              {"val_acc", choice.val_accuracy},
              {"test_acc", accuracy(pred, test_labels)},
              {"grid", choice.grid},
              {"val_accuracies", choice.accuracies}};
    };
    json result = {{"classes", classes},
                   {"train", sp.train},
                   {"validation", sp.validation},
                   {"test", sp.test},
                   {"nngp", evaluate(k.nngp)},
                   {"ntk", evaluate(k.ntk)}};
    const std::string path = out_path(cfg, "infer.json");
    write_text(path, result.dump(2) + "\n");
    return std::vector<std::string>{path};
  });
}

std::vector<std::string> run_command(Command command, const ExperimentConfig& cfg) {
  switch (command) {
    case Command::Kernel: return run_kernel(cfg);
    case Command::McSweep: return run_mc_sweep(cfg);
    case Command::NtkCheck: return run_ntk_check(cfg);
    case Command::Infer: return run_infer(cfg);
  }
  throw ConfigError("unknown command");
}

}  // namespace iak
