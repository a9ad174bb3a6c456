#include "kernel/layer_kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "common/error.hpp"

namespace iak {

namespace {

constexpr double kSlack = 1e-12;

double checked_variance(double v, const char* where) {
  if (v < -kSlack) throw NumericalError(std::string(where) + ": negative variance " + std::to_string(v));
  return std::max(v, 0.0);
}

template <typename Scalar>
KernelBlock elementwise(const PairBlocks& in, Scalar&& f) {
  const Matrix& k = in.cross.nngp;
  const Matrix& kx = in.xx.nngp;
  const Matrix& kxp = in.xpxp.nngp;
  KernelBlock out{Matrix(k.rows(), k.cols()), Matrix(k.rows(), k.cols())};
  for (Eigen::Index b = 0; b < k.cols(); ++b) {
    for (Eigen::Index a = 0; a < k.rows(); ++a) {
      const ScalarKernel s = f(kx(a, a), kxp(b, b), k(a, b));
      out.nngp(a, b) = s.value;
      out.ntk(a, b) = s.derivative * in.cross.ntk(a, b);
    }
  }
  return out;
}

}  // namespace

KernelBlock dense_kernel(const KernelBlock& in, double weight_var, double bias_var) {
  KernelBlock out;
  out.nngp = (weight_var * in.nngp).array() + bias_var;
  out.ntk = weight_var * in.ntk + out.nngp;
  return out;
}

ScalarKernel relu_scalar(double k_aa, double k_bb, double k_ab) {
  k_aa = checked_variance(k_aa, "relu");
  k_bb = checked_variance(k_bb, "relu");
  const double norm = std::sqrt(k_aa * k_bb);
  const double c = norm > 0.0 ? std::clamp(k_ab / norm, -1.0, 1.0) : 0.0;
  const double theta = std::acos(c);
  const double pi = std::numbers::pi;
  return {norm * (std::sin(theta) + (pi - theta) * c) / (2.0 * pi), (pi - theta) / (2.0 * pi)};
}

ScalarKernel erf_scalar(double k_aa, double k_bb, double k_ab) {
  k_aa = checked_variance(k_aa, "erf");
  k_bb = checked_variance(k_bb, "erf");
  const double prod = (1.0 + 2.0 * k_aa) * (1.0 + 2.0 * k_bb);
  double arg = 2.0 * k_ab / std::sqrt(prod);
  if (std::abs(arg) > 1.0 + kSlack) throw NumericalError("erf: correlation argument " + std::to_string(arg) + " outside [-1, 1]");
  arg = std::clamp(arg, -1.0, 1.0);
  const double pi = std::numbers::pi;
  const double gap = std::max(prod - 4.0 * k_ab * k_ab, 1e-300);
  return {2.0 / pi * std::asin(arg), 4.0 / pi / std::sqrt(gap)};
}

KernelBlock relu_kernel(const PairBlocks& in) { return elementwise(in, relu_scalar); }

KernelBlock erf_kernel(const PairBlocks& in) { return elementwise(in, erf_scalar); }

KernelBlock nonlinearity_kernel(const PairBlocks& in, Nonlinearity kind) {
  switch (kind) {
    case Nonlinearity::Relu: return relu_kernel(in);
    case Nonlinearity::Erf: return erf_kernel(in);
    case Nonlinearity::Identity: return in.cross;
  }
  return in.cross;
}

std::vector<long> conv_axis_patch(std::size_t n, const ConvLayer& conv, std::size_t out) {
  long pad_before = 0;
  if (conv.padding == Padding::Same) {
    const std::size_t n_out = (n + conv.stride - 1) / conv.stride;
    const long total = static_cast<long>((n_out - 1) * conv.stride + conv.filter_size) - static_cast<long>(n);
    pad_before = std::max(total, 0L) / 2;
  }
  std::vector<long> idx(conv.filter_size);
  for (std::size_t i = 0; i < conv.filter_size; ++i) {
    const long p = static_cast<long>(out * conv.stride + i) - pad_before;
    idx[i] = (p >= 0 && p < static_cast<long>(n)) ? p : -1;
  }
  return idx;
}

std::vector<std::vector<long>> conv_patch_lists(const SpatialGeometry& g, const ConvLayer& conv) {
  const SpatialGeometry o = layer_output_geometry(Layer{conv}, g, -1);
  std::vector<std::vector<long>> out(o.size());
  if (g.kind == GeometryKind::String) {
    for (std::size_t a = 0; a < o.size(); ++a) out[a] = conv_axis_patch(g.length, conv, a);
    return out;
  }
  for (std::size_t r = 0; r < o.height; ++r) {
    const auto rows = conv_axis_patch(g.height, conv, r);
    for (std::size_t c = 0; c < o.width; ++c) {
      const auto cols = conv_axis_patch(g.width, conv, c);
      auto& p = out[r * o.width + c];
      p.reserve(rows.size() * cols.size());
      for (long pr : rows)
        for (long pc : cols) p.push_back(pr < 0 || pc < 0 ? -1 : pr * static_cast<long>(g.width) + pc);
    }
  }
  return out;
}

KernelBlock conv_kernel(const KernelBlock& in, const SpatialGeometry& gx, const SpatialGeometry& gxp,
                        const ConvLayer& conv) {
  if (gx.kind != gxp.kind || gx.kind == GeometryKind::Vector)
    throw ShapeError("convolution needs image or string geometry on both inputs");
  const SpatialGeometry ox = layer_output_geometry(Layer{conv}, gx, -1);
  const SpatialGeometry oxp = layer_output_geometry(Layer{conv}, gxp, -1);

  const auto px = conv_patch_lists(gx, conv);
  const auto pxp = conv_patch_lists(gxp, conv);
  const double d_f = static_cast<double>(px.empty() ? 1 : px[0].size());
  const double w = conv.weight_var / d_f;

  KernelBlock out{Matrix(ox.size(), oxp.size()), Matrix(ox.size(), oxp.size())};
  for (std::size_t b = 0; b < oxp.size(); ++b) {
    for (std::size_t a = 0; a < ox.size(); ++a) {
      double k = 0.0, t = 0.0;
      for (std::size_t i = 0; i < px[a].size(); ++i) {
        const long u = px[a][i], v = pxp[b][i];
        if (u < 0 || v < 0) continue;
        k += in.nngp(u, v);
        t += in.ntk(u, v);
      }
      const double kappa = w * k + conv.bias_var;
      out.nngp(a, b) = kappa;
      out.ntk(a, b) = w * t + kappa;
    }
  }
  return out;
}

KernelBlock layernorm_kernel(const PairBlocks& in, LayerNormNtk mode) {
  const Matrix& kx = in.xx.nngp;
  const Matrix& kxp = in.xpxp.nngp;
  for (Eigen::Index a = 0; a < kx.rows(); ++a)
    if (!(kx(a, a) >= kSlack)) throw NumericalError("layer_norm: non-positive variance at position " + std::to_string(a));
  for (Eigen::Index b = 0; b < kxp.rows(); ++b)
    if (!(kxp(b, b) >= kSlack)) throw NumericalError("layer_norm: non-positive variance at position " + std::to_string(b));

  const Vector sx = kx.diagonal().cwiseSqrt().cwiseInverse();
  const Vector sxp = kxp.diagonal().cwiseSqrt().cwiseInverse();
  KernelBlock out;
  out.nngp = sx.asDiagonal() * in.cross.nngp * sxp.asDiagonal();
  if (in.self) out.nngp.diagonal().setOnes();

  if (mode == LayerNormNtk::NngpDiagonal) {
    out.ntk = sx.asDiagonal() * in.cross.ntk * sxp.asDiagonal();
    return out;
  }
  // A zero NTK diagonal means the block carries no gradient signal; it stays
  // zero rather than dividing by zero.
  auto inv_sqrt = [](const Matrix& t) {
    Vector v(t.rows());
    for (Eigen::Index i = 0; i < t.rows(); ++i) v(i) = t(i, i) > kSlack ? 1.0 / std::sqrt(t(i, i)) : 0.0;
    return v;
  };
  out.ntk = inv_sqrt(in.xx.ntk).asDiagonal() * in.cross.ntk * inv_sqrt(in.xpxp.ntk).asDiagonal();
  return out;
}

KernelBlock gap_kernel(const KernelBlock& in) {
  KernelBlock out{Matrix::Constant(1, 1, in.nngp.mean()), Matrix::Constant(1, 1, in.ntk.mean())};
  return out;
}

KernelBlock flatten_readout_kernel(const KernelBlock& in, double weight_var, double bias_var) {
  if (in.nngp.rows() != in.nngp.cols())
    throw ShapeError("flatten: inputs have different spatial sizes (" + std::to_string(in.nngp.rows()) + " vs " +
                     std::to_string(in.nngp.cols()) + ")");
  const double d_s = static_cast<double>(in.nngp.rows());
  const double kappa = weight_var * in.nngp.trace() / d_s + bias_var;
  KernelBlock out{Matrix::Constant(1, 1, kappa), Matrix::Constant(1, 1, weight_var * in.ntk.trace() / d_s + kappa)};
  return out;
}

}  // namespace iak
