#include "kernel/engine.hpp"

#include <cmath>
#include <utility>

#include "common/error.hpp"
#include "common/parallel.hpp"
#include "common/rng.hpp"
#include "kernel/attention_kernels.hpp"
#include "kernel/layer_kernels.hpp"

namespace iak {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// Block states before every layer plus the final one, for a single input.
struct Trajectory {
  std::vector<KernelBlock> blocks;
  std::vector<SpatialGeometry> geometry;
};

Trajectory diagonal_trajectory(const Architecture& arch, const KernelInput& x, const EngineOptions& opts) {
  const KernelPairState s0 = input_kernel(x, x, opts);
  Trajectory t;
  t.blocks.reserve(arch.layers.size() + 1);
  t.geometry.reserve(arch.layers.size() + 1);
  t.blocks.push_back(s0.diag_x);
  t.geometry.push_back(s0.geom_x);
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    t.blocks.push_back(layer_transform(arch.layers[i], PairBlocks::diagonal(t.blocks[i], t.geometry[i]), i, opts));
    t.geometry.push_back(layer_output_geometry(arch.layers[i], t.geometry[i], static_cast<long>(i)));
  }
  return t;
}

KernelBlock cross_from_trajectories(const Architecture& arch, const KernelBlock& cross0, const Trajectory& tx,
                                    const Trajectory& txp, const EngineOptions& opts) {
  KernelBlock cross = cross0;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const PairBlocks view{tx.blocks[i], txp.blocks[i], cross, tx.geometry[i], txp.geometry[i], false};
    cross = layer_transform(arch.layers[i], view, i, opts);
  }
  return cross;
}

bool same_input(const KernelInput& x, const KernelInput& xp) {
  return x.geometry == xp.geometry && x.values.rows() == xp.values.rows() && x.values.cols() == xp.values.cols() &&
         x.values == xp.values;
}

void check_inputs(const Architecture& arch, const KernelInput& x) {
  if (x.values.rows() == 0 || x.values.cols() == 0) throw ShapeError("input has zero length");
  if (static_cast<std::size_t>(x.values.rows()) != x.geometry.size())
    throw ShapeError("input has " + std::to_string(x.values.rows()) + " positions but geometry " + x.geometry.describe());
  arch.output_geometry(x.geometry);
}

bool is_post_nonlinearity(const Architecture& arch) {
  return !arch.layers.empty() && std::holds_alternative<NonlinearityLayer>(arch.layers.back().kind);
}

}  // namespace

void SequenceMask::validate(std::size_t n_inputs) const {
  if (lengths.size() != n_inputs)
    throw ConfigError("mask has " + std::to_string(lengths.size()) + " lengths for " + std::to_string(n_inputs) +
                      " inputs");
  for (std::size_t i = 0; i < lengths.size(); ++i)
    if (lengths[i] < 1 || lengths[i] > max_length)
      throw ConfigError("mask length " + std::to_string(lengths[i]) + " of input " + std::to_string(i) +
                        " outside [1, " + std::to_string(max_length) + "]");
}

KernelInput truncate(const KernelInput& x, std::size_t length) {
  if (x.geometry.kind != GeometryKind::String) throw ShapeError("masks apply to string inputs only");
  if (length < 1 || length > x.geometry.length)
    throw ShapeError("mask length " + std::to_string(length) + " exceeds input length " +
                     std::to_string(x.geometry.length));
  return {x.values.topRows(static_cast<Eigen::Index>(length)), SpatialGeometry::string(length)};
}

Matrix standardize_positions(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  const double d = static_cast<double>(x.cols());
  for (Eigen::Index a = 0; a < x.rows(); ++a) {
    const double mean = x.row(a).mean();
    const Eigen::RowVectorXd centered = x.row(a).array() - mean;
    const double sd = std::sqrt(centered.squaredNorm() / d) + 1e-15;
    out.row(a) = centered / sd;
  }
  return out;
}

KernelPairState input_kernel(const KernelInput& x, const KernelInput& xp, const EngineOptions& opts) {
  if (x.values.rows() == 0 || xp.values.rows() == 0 || x.values.cols() == 0)
    throw ShapeError("input has zero length");
  if (x.values.cols() != xp.values.cols())
    throw ShapeError("inputs have different embedding dimensions (" + std::to_string(x.values.cols()) + " vs " +
                     std::to_string(xp.values.cols()) + ")");
  const bool self = same_input(x, xp);
  const Matrix gx = opts.standardize ? standardize_positions(x.values) : x.values;
  const Matrix gxp = self ? gx : (opts.standardize ? standardize_positions(xp.values) : xp.values);
  const double d0 = static_cast<double>(x.values.cols());

  auto block = [&](const Matrix& a, const Matrix& b) {
    KernelBlock k;
    k.nngp = a * b.transpose() / d0;
    k.ntk = opts.input_ntk == InputNtk::InputKernel ? k.nngp : Matrix(Matrix::Zero(a.rows(), b.rows()));
    return k;
  };
  KernelPairState s;
  s.diag_x = block(gx, gx);
  s.diag_xp = self ? s.diag_x : block(gxp, gxp);
  s.cross = self ? s.diag_x : block(gx, gxp);
  s.geom_x = x.geometry;
  s.geom_xp = xp.geometry;
  s.self_pair = self;
  return s;
}

KernelBlock layer_transform(const Layer& layer, const PairBlocks& in, std::size_t index, const EngineOptions& opts) {
  try {
    return std::visit(
        overloaded{
            [&](const DenseLayer& l) { return dense_kernel(in.cross, l.weight_var, l.bias_var); },
            [&](const NonlinearityLayer& l) { return nonlinearity_kernel(in, l.kind); },
            [&](const ConvLayer& l) { return conv_kernel(in.cross, in.geom_x, in.geom_xp, l); },
            [&](const AttentionLayer& l) {
              return attention_kernel(in, l.config, stream_key(opts.seed, {l.config.mc_seed, index}));
            },
            [&](const LayerNormLayer& l) { return layernorm_kernel(in, l.ntk); },
            [&](const GlobalAveragePoolLayer&) { return gap_kernel(in.cross); },
            [&](const FlattenReadoutLayer& l) { return flatten_readout_kernel(in.cross, l.weight_var, l.bias_var); },
            [&](const ResidualLayer& l) {
              const KernelBlock inner = layer_transform(*l.inner, in, index, opts);
              KernelBlock out;
              out.nngp = l.alpha * in.cross.nngp + (1.0 - l.alpha) * inner.nngp;
              out.ntk = l.alpha * in.cross.ntk + (1.0 - l.alpha) * inner.ntk;
              return out;
            },
            [&](const ResidualAttentionLayer& l) { return residual_attention_kernel(in, l); },
        },
        layer.kind);
  } catch (const ShapeError& e) {
    if (e.layer_index() >= 0) throw;
    throw ShapeError(layer.name() + ": " + e.what(), static_cast<long>(index));
  } catch (const NumericalError& e) {
    const std::string prefix = "layer " + std::to_string(index);
    if (std::string(e.what()).rfind(prefix, 0) == 0) throw;
    throw NumericalError(prefix + " (" + layer.name() + "): " + e.what());
  }
}

KernelPairState propagate_pair(const Architecture& arch, const KernelInput& x, const KernelInput& xp,
                               const EngineOptions& opts, const SequenceMask* mask) {
  if (mask) {
    mask->validate(2);
    return propagate_pair(arch, truncate(x, mask->lengths[0]), truncate(xp, mask->lengths[1]), opts, nullptr);
  }
  check_inputs(arch, x);
  check_inputs(arch, xp);
  const KernelPairState s0 = input_kernel(x, xp, opts);
  const Trajectory tx = diagonal_trajectory(arch, x, opts);
  const Trajectory txp = s0.self_pair ? tx : diagonal_trajectory(arch, xp, opts);

  KernelPairState out;
  out.diag_x = tx.blocks.back();
  out.diag_xp = txp.blocks.back();
  out.cross = s0.self_pair ? out.diag_x : cross_from_trajectories(arch, s0.cross, tx, txp, opts);
  out.geom_x = tx.geometry.back();
  out.geom_xp = txp.geometry.back();
  out.self_pair = s0.self_pair;
  out.post_nonlinearity = is_post_nonlinearity(arch);
  return out;
}

BatchKernels propagate_batch(const Architecture& arch, const std::vector<KernelInput>& inputs,
                             const EngineOptions& opts, const SequenceMask* mask) {
  std::vector<KernelInput> xs;
  if (mask) {
    mask->validate(inputs.size());
    xs.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) xs.push_back(truncate(inputs[i], mask->lengths[i]));
  }
  const std::vector<KernelInput>& in = mask ? xs : inputs;
  const std::size_t n = in.size();
  for (const auto& x : in) {
    check_inputs(arch, x);
    if (arch.output_geometry(x.geometry).kind != GeometryKind::Vector)
      throw ConfigError("architecture lacks a trailing global_average_pool or flatten readout");
  }

  // Inner layers run single-threaded; the batch parallelizes over inputs and pairs.
  EngineOptions inner = opts;
  inner.threads = 1;
  std::vector<Trajectory> traj(n);
  parallel_for(n, opts.threads, [&](std::size_t i) { traj[i] = diagonal_trajectory(arch, in[i], inner); });

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  std::vector<KernelBlock> cross(pairs.size());
  parallel_for(pairs.size(), opts.threads, [&](std::size_t p) {
    const auto [i, j] = pairs[p];
    const KernelPairState s0 = input_kernel(in[i], in[j], inner);
    cross[p] = s0.self_pair ? traj[i].blocks.back() : cross_from_trajectories(arch, s0.cross, traj[i], traj[j], inner);
  });

  BatchKernels out{Matrix(n, n), Matrix(n, n)};
  for (std::size_t i = 0; i < n; ++i) {
    out.nngp(i, i) = traj[i].blocks.back().nngp(0, 0);
    out.ntk(i, i) = traj[i].blocks.back().ntk(0, 0);
  }
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    out.nngp(i, j) = out.nngp(j, i) = cross[p].nngp(0, 0);
    out.ntk(i, j) = out.ntk(j, i) = cross[p].ntk(0, 0);
  }
  for (Eigen::Index i = 0; i < out.nngp.size(); ++i)
    if (!std::isfinite(out.nngp.data()[i]) || !std::isfinite(out.ntk.data()[i]))
      throw NumericalError("kernel matrix contains non-finite entries");
  return out;
}

}  // namespace iak
