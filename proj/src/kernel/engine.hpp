#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "kernel/architecture.hpp"
#include "kernel/kernel_state.hpp"

namespace iak {

// One input: rows are spatial positions (flattened row-major for images),
// columns are embedding channels.
struct KernelInput {
  Matrix values;
  SpatialGeometry geometry;
};

// Valid lengths of padded string inputs.
struct SequenceMask {
  std::vector<std::size_t> lengths;
  std::size_t max_length = 0;

  void validate(std::size_t n_inputs) const;
};

// Drops positions beyond `length` (string geometry only).
KernelInput truncate(const KernelInput& x, std::size_t length);

// Base case of the NTK recursion. Inputs carry no parameters, so the default
// starts from zero; InputKernel starts from the input NNGP instead.
enum class InputNtk { Zero, InputKernel };

struct EngineOptions {
  bool standardize = false;  // per-position standardization across channels
  InputNtk input_ntk = InputNtk::Zero;
  std::uint64_t seed = 0;  // folded into Monte-Carlo attention streams
  std::size_t threads = 1;
};

// Per-position standardization: subtract the channel mean and divide by the
// channel standard deviation (inflated by 1e-15).
Matrix standardize_positions(const Matrix& x);

KernelPairState input_kernel(const KernelInput& x, const KernelInput& xp, const EngineOptions& opts = {});

// New cross block produced by one layer; `index` names the layer in errors
// and keys Monte-Carlo streams.
KernelBlock layer_transform(const Layer& layer, const PairBlocks& in, std::size_t index, const EngineOptions& opts);

// Final-layer state of (x, x'). `mask`, when given, holds the two valid
// lengths and the inputs are truncated to them first.
KernelPairState propagate_pair(const Architecture& arch, const KernelInput& x, const KernelInput& xp,
                               const EngineOptions& opts = {}, const SequenceMask* mask = nullptr);

struct BatchKernels {
  Matrix nngp;
  Matrix ntk;
};

// n x n scalar kernel matrices; the architecture must end in a readout
// (global_average_pool or flatten). Pairs are evaluated concurrently on
// opts.threads workers; only the upper triangle is computed.
BatchKernels propagate_batch(const Architecture& arch, const std::vector<KernelInput>& inputs,
                             const EngineOptions& opts = {}, const SequenceMask* mask = nullptr);

}  // namespace iak
