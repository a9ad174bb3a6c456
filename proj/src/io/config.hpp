#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "finite/empirical.hpp"
#include "io/dataset.hpp"
#include "kernel/architecture.hpp"
#include "kernel/engine.hpp"

namespace iak {

enum class Command { Kernel, McSweep, NtkCheck, Infer };

Command parse_command(const std::string& name);
std::string command_name(Command c);

// A finite size given as a number or relative to the layer width.
struct DimRule {
  enum Kind { Fixed, Width, SqrtWidth } kind = Width;
  std::size_t value = 0;

  std::size_t resolve(std::size_t width) const;
};

struct FiniteSizes {
  std::vector<std::size_t> widths{16, 64, 256, 1024};
  DimRule logit_dim{DimRule::Width};
  DimRule heads{DimRule::SqrtWidth};
  DimRule value_dim{DimRule::SqrtWidth};
  DimRule output_channels{DimRule::Fixed, 1};
  // Explicit seeds, or `seed_count` consecutive seeds from the run seed.
  std::vector<std::uint64_t> seeds;
  std::size_t seed_count = 5;
  std::size_t n_inputs = 0;  // first n inputs of the dataset; 0 uses all

  FiniteWidthSpec spec(std::size_t width) const;
  std::vector<std::uint64_t> resolved_seeds(std::uint64_t run_seed) const;
};

struct McSweepConfig {
  FiniteSizes sizes;
  std::vector<std::size_t> sample_counts{100, 1000, 10000};
  NngpSampler sampler = NngpSampler::Conditional;
};

struct NtkCheckConfig {
  FiniteSizes sizes;
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};

struct ExperimentConfig {
  std::optional<Command> command;
  Architecture architecture;
  DatasetSpec dataset;
  std::string base_dir;  // dataset paths are relative to this (the config's directory)
  SplitSizes split;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  Precision precision = Precision::F64;
  std::string output = "out";
  InputNtk input_ntk = InputNtk::Zero;
  McSweepConfig mc_sweep;
  NtkCheckConfig ntk_check;
  int classes = 0;  // infer: 0 takes max label + 1
};

// Strict parsing: unknown keys, wrong types and out-of-range values throw
// ConfigError naming the offending path.
Architecture parse_architecture(const std::string& json_text);
std::string architecture_to_json(const Architecture& arch);

ExperimentConfig parse_config(const std::string& json_text, const std::string& base_dir = "");
ExperimentConfig load_config(const std::string& path);

// Every field written out, defaults included; parse_config inverts it.
std::string config_to_json(const ExperimentConfig& cfg);

}  // namespace iak
