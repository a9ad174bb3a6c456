#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "iak/iak.h"

namespace {

constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

int exit_code(iak_status s) {
  switch (s) {
    case IAK_OK: return 0;
    case IAK_ERR_INVALID_ARGUMENT:
    case IAK_ERR_CONFIG:
    case IAK_ERR_SHAPE: return kExitConfig;
    case IAK_ERR_NUMERICAL: return kExitNumerical;
    default: return kExitOther;
  }
}

int report(iak_status s, const std::string& context) {
  std::fprintf(stderr, "iak: %s: %s: %s\n", context.c_str(), iak_status_name(s), iak_last_error());
  return exit_code(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Infinite-width attention kernels: exact NNGP/NTK, Monte-Carlo checks and GP inference"};
  app.set_version_flag("--version", std::string(iak_version()));

  std::string command, config, precision, out;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  app.add_option("command", command, "kernel | mc_sweep | ntk_check | infer")
      ->required()
      ->check(CLI::IsMember({"kernel", "mc_sweep", "ntk_check", "infer"}));
  app.add_option("--config", config, "experiment config (JSON)")->required();
  auto* seed_opt = app.add_option("--seed", seed, "overrides the config seed");
  auto* threads_opt = app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--precision", precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--out", out, "output directory (overrides the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  iak_experiment* raw = nullptr;
  if (iak_status s = iak_experiment_load(config.c_str(), &raw); s != IAK_OK) return report(s, config);
  std::unique_ptr<iak_experiment, decltype(&iak_experiment_free)> exp(raw, iak_experiment_free);

  iak_status s = IAK_OK;
  if (*seed_opt && (s = iak_experiment_set_seed(exp.get(), seed)) != IAK_OK) return report(s, "--seed");
  if (*threads_opt && (s = iak_experiment_set_threads(exp.get(), threads)) != IAK_OK) return report(s, "--threads");
  if (!precision.empty() &&
      (s = iak_experiment_set_precision(exp.get(), precision == "f32" ? IAK_PRECISION_F32 : IAK_PRECISION_F64)) !=
          IAK_OK)
    return report(s, "--precision");
  if (!out.empty() && (s = iak_experiment_set_output(exp.get(), out.c_str())) != IAK_OK) return report(s, "--out");

  if ((s = iak_experiment_run(exp.get(), command.c_str())) != IAK_OK) return report(s, command);
  return 0;
}
