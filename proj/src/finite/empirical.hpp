#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "finite/finite_net.hpp"

namespace iak {

enum class Precision { F32, F64 };

// Conditional: each linear map is drawn from its exact Gaussian law given the
// Gram matrix of its input (attention logits through a Bartlett factor), so
// no weight tensor is materialized. Explicit: sample_params + forward.
// Both produce draws from the same distribution over network outputs.
enum class NngpSampler { Conditional, Explicit };

struct EmpiricalOptions {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  Precision precision = Precision::F64;
  NngpSampler sampler = NngpSampler::Conditional;
};

struct EmpiricalKernel {
  Matrix mean;  // n x n
  Matrix se;    // per-entry standard error of the mean
  std::size_t samples = 0;
  std::size_t channels = 0;
};

constexpr double kDistanceFloor = -70.0;

// Outputs of one random network (one row per input, output_channels columns).
// Sample k of seed s is the same network for every n_samples and thread count.
Matrix sample_network_output(const Architecture& arch, const FiniteWidthSpec& widths, const InputStack& inputs,
                             std::uint64_t sample, const EmpiricalOptions& opts);

// Average over draws and output channels of f(x) f(x')^T / channels.
EmpiricalKernel empirical_nngp(const Architecture& arch, const FiniteWidthSpec& widths, const InputStack& inputs,
                               std::size_t n_samples, const EmpiricalOptions& opts);

// Estimates over the first counts[i] draws of one stream, for sorted counts.
std::vector<EmpiricalKernel> empirical_nngp_prefixes(const Architecture& arch, const FiniteWidthSpec& widths,
                                                     const InputStack& inputs, const std::vector<std::size_t>& counts,
                                                     const EmpiricalOptions& opts);

// log(||estimate - exact||_F^2 / ||exact||_F^2), or `floor` when the
// estimate is exact.
double kernel_distance(const Matrix& estimate, const Matrix& exact, double floor = kDistanceFloor);

// ||estimate - exact||_F / ||exact||_F.
double relative_frobenius_error(const Matrix& estimate, const Matrix& exact);

}  // namespace iak
