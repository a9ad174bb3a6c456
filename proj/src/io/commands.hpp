#pragma once

#include <string>
#include <vector>

#include "io/config.hpp"

namespace iak {

// Each command writes into the directory cfg.output (created if missing) and
// returns the paths it wrote. Errors keep their type and gain the command
// name as context.
//
//   kernel     nngp.iak, ntk.iak (f32 or f64 per cfg.precision), summary.json
//   mc_sweep   mc_sweep.csv   width,n_samples,seed,log_distance
//   ntk_check  ntk_check.csv  width,seed,rel_error
//   infer      infer.json     {"nngp": {lambda, val_acc, test_acc, ...}, "ntk": {...}}
std::vector<std::string> run_kernel(const ExperimentConfig& cfg);
std::vector<std::string> run_mc_sweep(const ExperimentConfig& cfg);
std::vector<std::string> run_ntk_check(const ExperimentConfig& cfg);
std::vector<std::string> run_infer(const ExperimentConfig& cfg);

std::vector<std::string> run_command(Command command, const ExperimentConfig& cfg);

}  // namespace iak
