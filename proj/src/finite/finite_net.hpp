#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "kernel/architecture.hpp"
#include "kernel/engine.hpp"

namespace iak {

constexpr double kLayerNormEps = 1e-12;

// Layer sizes of a finite network. The same sizes are used by every layer;
// the last parameterized layer emits `output_channels`.
struct FiniteWidthSpec {
  std::size_t width = 64;
  std::size_t logit_dim = 64;  // rows of W^Q, W^K per head
  std::size_t heads = 1;
  std::size_t value_dim = 64;  // per-head value size
  std::size_t output_channels = 1;

  // logit_dim = width, heads = value_dim = floor(sqrt(width)).
  static FiniteWidthSpec sqrt_heads(std::size_t width, std::size_t output_channels = 1);
  void validate() const;
};

// All inputs stacked row-wise; input n owns rows [offsets[n], offsets[n+1]).
struct InputStack {
  Matrix rows;
  std::vector<std::size_t> offsets;
  std::vector<SpatialGeometry> geometry;

  std::size_t count() const { return geometry.size(); }
  Eigen::Index begin(std::size_t n) const { return static_cast<Eigen::Index>(offsets[n]); }
  Eigen::Index size(std::size_t n) const { return static_cast<Eigen::Index>(offsets[n + 1] - offsets[n]); }
};

InputStack stack_inputs(const std::vector<KernelInput>& inputs, bool standardize = false);

// A layer with resolved channel sizes. Residual attention layers are
// rewritten as a residual around a d^-1 identity-zeta attention layer whose
// queries and keys see only the positional encodings.
struct PlannedLayer {
  Layer layer;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  SpatialGeometry in_geometry;  // for the reference input geometry
  std::vector<PlannedLayer> inner;
};

std::vector<PlannedLayer> plan_layers(const Architecture& arch, const FiniteWidthSpec& widths,
                                      const SpatialGeometry& geometry, std::size_t d0);

struct HeadParams {
  Matrix wq;  // d_in x logit_dim
  Matrix wk;  // empty when tied to wq
  Matrix wv;  // d_in x value_dim
};

// Standard-normal trainable tensors; variances enter through the forward
// pass (NTK parameterization).
struct LayerParams {
  Matrix w;
  Vector b;
  std::vector<HeadParams> heads;
  Matrix wo;
  Matrix pe_tilde;   // encodings before the covariance factor, d_s x d_in
  Matrix pe_factor;  // L with L L^T = R (not trainable)
  std::vector<LayerParams> inner;
};

struct FiniteNetParams {
  std::vector<PlannedLayer> plan;
  std::vector<LayerParams> layers;
  FiniteWidthSpec widths;
  SpatialGeometry input_geometry;
  std::size_t d0 = 0;
};

// Scale factors of one attention layer's forward pass (NTK parameterization):
// Q = qk X W^Q, V = value X W^V, out = out H W^O, logits Q K^T / denominator.
struct AttentionScales {
  double qk;
  double value;
  double out;
  double denominator;
};

AttentionScales attention_scales(const AttentionConfig& cfg, std::size_t in_dim, const FiniteWidthSpec& widths);

// W^K is W^Q: d^-1 scaling with tie_qk.
bool qk_tied(const AttentionConfig& cfg);

// L with L L^T = R for the layer's positional-encoding covariance on g.
Matrix pe_factor(const AttentionConfig& cfg, const SpatialGeometry& g);

// Deterministic in (seed, sample). W^Q and W^K are tied whenever the layer
// uses d^-1 scaling or requests it.
FiniteNetParams sample_params(const Architecture& arch, const FiniteWidthSpec& widths, const SpatialGeometry& geometry,
                              std::size_t d0, std::uint64_t seed, std::uint64_t sample = 0);

// Output rows for every input: one row per position, or a single row after
// global_average_pool / flatten.
InputStack forward(const FiniteNetParams& params, const InputStack& inputs);

// Jacobian-Gram NTK over all trainable tensors, averaged over output
// channels. Needs a trailing readout.
Matrix empirical_ntk(const FiniteNetParams& params, const InputStack& inputs);

// Visits every trainable tensor in a fixed order.
template <typename Fn>
void for_each_parameter(LayerParams& p, Fn&& fn);
template <typename Fn>
void for_each_parameter(FiniteNetParams& params, Fn&& fn);

std::size_t parameter_count(const FiniteNetParams& params);

// Flattened gradient of output channel `channel` of input `index` with
// respect to all trainable tensors, in for_each_parameter order.
Vector parameter_gradient(const FiniteNetParams& params, const InputStack& inputs, std::size_t index,
                          std::size_t channel);

template <typename Fn>
void for_each_parameter(LayerParams& p, Fn&& fn) {
  if (p.w.size()) fn(p.w.data(), p.w.size());
  if (p.b.size()) fn(p.b.data(), p.b.size());
  for (auto& h : p.heads) {
    fn(h.wq.data(), h.wq.size());
    if (h.wk.size()) fn(h.wk.data(), h.wk.size());
    fn(h.wv.data(), h.wv.size());
  }
  if (p.wo.size()) fn(p.wo.data(), p.wo.size());
  if (p.pe_tilde.size()) fn(p.pe_tilde.data(), p.pe_tilde.size());
  for (auto& in : p.inner) for_each_parameter(in, fn);
}

template <typename Fn>
void for_each_parameter(FiniteNetParams& params, Fn&& fn) {
  for (auto& l : params.layers) for_each_parameter(l, fn);
}

}  // namespace iak
