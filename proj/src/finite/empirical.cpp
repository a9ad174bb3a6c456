#include "finite/empirical.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "common/error.hpp"
#include "common/parallel.hpp"
#include "common/rng.hpp"
#include "finite/conditional.hpp"
#include "kernel/layer_kernels.hpp"

namespace iak {

namespace {

using conditional::Mat;
using conditional::add_bias;
using conditional::gram_factor;
using conditional::logit_core;
using conditional::normals;
using conditional::sample_linear;

constexpr std::size_t kChunk = 64;

enum Tensor : std::uint64_t { kW = 1, kB, kQ, kK, kV, kO, kPe };

template <typename T>
struct Rows {
  Mat<T> x;
  std::vector<std::size_t> offsets;
  std::vector<SpatialGeometry> geometry;

  std::size_t count() const { return geometry.size(); }
  Eigen::Index begin(std::size_t n) const { return static_cast<Eigen::Index>(offsets[n]); }
  Eigen::Index size(std::size_t n) const { return static_cast<Eigen::Index>(offsets[n + 1] - offsets[n]); }
};

struct PreparedLayer {
  const PlannedLayer* plan = nullptr;
  Matrix pe_factor;
  std::vector<PreparedLayer> inner;
};

PreparedLayer prepare(const PlannedLayer& p) {
  PreparedLayer out;
  out.plan = &p;
  if (const auto* a = std::get_if<AttentionLayer>(&p.layer.kind))
    if (a->config.pe.kind != PeKind::None) out.pe_factor = pe_factor(a->config, p.in_geometry);
  for (const auto& in : p.inner) out.inner.push_back(prepare(in));
  return out;
}

template <typename T>
Mat<T> zeta(const Mat<T>& g, Zeta z) {
  switch (z) {
    case Zeta::Identity: return g;
    case Zeta::Relu: return g.cwiseMax(T(0));
    case Zeta::Softmax: {
      Mat<T> a(g.rows(), g.cols());
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const T m = g.row(i).maxCoeff();
        a.row(i) = (g.row(i).array() - m).exp();
        a.row(i) /= a.row(i).sum();
      }
      return a;
    }
  }
  return g;
}

void require_fixed_geometry(const std::vector<SpatialGeometry>& gs, const SpatialGeometry& g, const char* what) {
  for (const auto& gi : gs)
    if (gi != g)
      throw ShapeError(std::string(what) + " needs every input to have geometry " + g.describe() + ", got " +
                       gi.describe());
}

template <typename T>
Rows<T> one_row_per_input(const Rows<T>& in, Mat<T> x) {
  Rows<T> out{std::move(x), {}, std::vector<SpatialGeometry>(in.count(), SpatialGeometry::vector())};
  for (std::size_t n = 0; n <= in.count(); ++n) out.offsets.push_back(n);
  return out;
}

template <typename T>
Rows<T> sample_attention(const PreparedLayer& pl, const AttentionConfig& cfg, const FiniteWidthSpec& w,
                         const Rows<T>& in, std::uint64_t key) {
  const PlannedLayer& p = *pl.plan;
  const AttentionScales sc = attention_scales(cfg, p.in_dim, w);
  Mat<T> in_qk = in.x;
  if (cfg.pe.kind != PeKind::None) {
    require_fixed_geometry(in.geometry, p.in_geometry, "positional encodings");
    const Mat<T> pe = (pl.pe_factor * normals<double>(stream_key(key, {kPe}), pl.pe_factor.cols(), in.x.cols()))
                          .template cast<T>();
    in_qk *= static_cast<T>(std::sqrt(cfg.pe.alpha));
    for (std::size_t n = 0; n < in.count(); ++n)
      in_qk.middleRows(in.begin(n), in.size(n)) += static_cast<T>(std::sqrt(1.0 - cfg.pe.alpha)) * pe;
  }
  const bool value_from_qk = cfg.pe.kind == PeKind::None || cfg.pe.value_pe;
  const Mat<T> fq = gram_factor(in_qk);
  const Mat<T> fv = value_from_qk ? fq : gram_factor(in.x);
  const auto dv = static_cast<Eigen::Index>(w.value_dim);
  const auto dg = static_cast<Eigen::Index>(w.logit_dim);
  const T logit_scale = static_cast<T>(sc.qk * sc.qk / sc.denominator);

  Mat<T> h(in.x.rows(), static_cast<Eigen::Index>(w.heads) * dv);
  for (std::size_t hd = 0; hd < w.heads; ++hd) {
    NormalStream s(stream_key(key, {kQ, hd}));
    const Mat<T> m = logit_scale * (fq * logit_core<T>(fq.cols(), dg, qk_tied(cfg), s));
    const Mat<T> v = static_cast<T>(sc.value) * (fv * normals<T>(stream_key(key, {kV, hd}), fv.cols(), dv));
    for (std::size_t n = 0; n < in.count(); ++n) {
      const Eigen::Index b = in.begin(n), len = in.size(n);
      const Mat<T> g = m.middleRows(b, len) * fq.middleRows(b, len).transpose();
      h.block(b, static_cast<Eigen::Index>(hd) * dv, len, dv) = zeta(g, cfg.zeta) * v.middleRows(b, len);
    }
  }
  return {sample_linear(h, static_cast<Eigen::Index>(p.out_dim), sc.out, stream_key(key, {kO})), in.offsets,
          in.geometry};
}

template <typename T>
Rows<T> sample_layer(const PreparedLayer& pl, const FiniteWidthSpec& w, const Rows<T>& in, std::uint64_t key) {
  const PlannedLayer& p = *pl.plan;
  const double d = static_cast<double>(p.in_dim);
  const auto out_dim = static_cast<Eigen::Index>(p.out_dim);
  return std::visit(
      [&](const auto& l) -> Rows<T> {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, DenseLayer>) {
          Rows<T> out{sample_linear(in.x, out_dim, std::sqrt(l.weight_var / d), stream_key(key, {kW})), in.offsets,
                      in.geometry};
          add_bias(out.x, l.bias_var, stream_key(key, {kB}));
          return out;
        } else if constexpr (std::is_same_v<L, NonlinearityLayer>) {
          Rows<T> out = in;
          if (l.kind == Nonlinearity::Relu) out.x = in.x.cwiseMax(T(0));
          if (l.kind == Nonlinearity::Erf) out.x = in.x.unaryExpr([](T v) { return std::erf(v); });
          return out;
        } else if constexpr (std::is_same_v<L, ConvLayer>) {
          Rows<T> out{{}, {0}, {}};
          std::vector<std::vector<std::vector<long>>> lists;
          for (std::size_t n = 0; n < in.count(); ++n) {
            lists.push_back(conv_patch_lists(in.geometry[n], l));
            out.geometry.push_back(layer_output_geometry(Layer{l}, in.geometry[n], -1));
            out.offsets.push_back(out.offsets.back() + lists.back().size());
          }
          const Eigen::Index di = in.x.cols();
          const auto df = static_cast<Eigen::Index>(lists[0][0].size());
          Mat<T> x = Mat<T>::Zero(static_cast<Eigen::Index>(out.offsets.back()), df * di);
          for (std::size_t n = 0; n < in.count(); ++n)
            for (std::size_t a = 0; a < lists[n].size(); ++a)
              for (Eigen::Index i = 0; i < df; ++i)
                if (lists[n][a][i] >= 0)
                  x.block(static_cast<Eigen::Index>(out.offsets[n] + a), i * di, 1, di) =
                      in.x.row(in.begin(n) + lists[n][a][i]);
          out.x = sample_linear(x, out_dim, std::sqrt(l.weight_var / (static_cast<double>(df) * d)),
                                stream_key(key, {kW}));
          add_bias(out.x, l.bias_var, stream_key(key, {kB}));
          return out;
        } else if constexpr (std::is_same_v<L, AttentionLayer>) {
          return sample_attention(pl, l.config, w, in, key);
        } else if constexpr (std::is_same_v<L, LayerNormLayer>) {
          Rows<T> out = in;
          for (Eigen::Index r = 0; r < in.x.rows(); ++r) {
            const T mean = in.x.row(r).mean();
            const T var = (in.x.row(r).array() - mean).square().mean();
            out.x.row(r) = (in.x.row(r).array() - mean) / std::sqrt(var + static_cast<T>(kLayerNormEps));
          }
          return out;
        } else if constexpr (std::is_same_v<L, GlobalAveragePoolLayer>) {
          Mat<T> x(static_cast<Eigen::Index>(in.count()), in.x.cols());
          for (std::size_t n = 0; n < in.count(); ++n) x.row(n) = in.x.middleRows(in.begin(n), in.size(n)).colwise().mean();
          return one_row_per_input(in, std::move(x));
        } else if constexpr (std::is_same_v<L, FlattenReadoutLayer>) {
          require_fixed_geometry(in.geometry, p.in_geometry, "flatten");
          const auto ds = static_cast<Eigen::Index>(p.in_geometry.size());
          const Eigen::Index di = in.x.cols();
          Mat<T> x(static_cast<Eigen::Index>(in.count()), ds * di);
          for (std::size_t n = 0; n < in.count(); ++n)
            for (Eigen::Index a = 0; a < ds; ++a) x.block(n, a * di, 1, di) = in.x.row(in.begin(n) + a);
          Mat<T> y = sample_linear(x, out_dim, std::sqrt(l.weight_var / static_cast<double>(ds * di)),
                                   stream_key(key, {kW}));
          add_bias(y, l.bias_var, stream_key(key, {kB}));
          return one_row_per_input(in, std::move(y));
        } else if constexpr (std::is_same_v<L, ResidualLayer>) {
          Rows<T> out = sample_layer(pl.inner[0], w, in, stream_key(key, {0x5e5}));
          out.x = static_cast<T>(std::sqrt(l.alpha)) * in.x + static_cast<T>(std::sqrt(1.0 - l.alpha)) * out.x;
          return out;
        } else {
          throw ConfigError("finite network: residual_attention must be planned first");
        }
      },
      p.layer.kind);
}

struct Sampler {
  const Architecture& arch;
  const FiniteWidthSpec& widths;
  const InputStack& inputs;
  EmpiricalOptions opts;
  std::vector<PlannedLayer> plan;
  std::vector<PreparedLayer> prepared;
  Rows<float> in32;

  Sampler(const Architecture& a, const FiniteWidthSpec& w, const InputStack& in, const EmpiricalOptions& o)
      : arch(a), widths(w), inputs(in), opts(o) {
    if (in.count() == 0) throw ShapeError("empirical kernel: no inputs");
    plan = plan_layers(arch, widths, in.geometry[0], static_cast<std::size_t>(in.rows.cols()));
    for (const auto& p : plan) prepared.push_back(prepare(p));
    if (opts.precision == Precision::F32) in32 = {in.rows.cast<float>(), in.offsets, in.geometry};
  }

  template <typename T>
  Matrix run(const Rows<T>& in, std::uint64_t sample) const {
    const std::uint64_t key = stream_key(opts.seed, {sample});
    Rows<T> cur = in;
    for (std::size_t i = 0; i < prepared.size(); ++i) cur = sample_layer(prepared[i], widths, cur, stream_key(key, {i}));
    return cur.x.template cast<double>();
  }

  Matrix output(std::uint64_t sample) const {
    Matrix y;
    if (opts.sampler == NngpSampler::Explicit) {
      y = forward(sample_params(arch, widths, inputs.geometry[0], static_cast<std::size_t>(inputs.rows.cols()),
                                opts.seed, sample),
                  inputs)
              .rows;
    } else if (opts.precision == Precision::F32) {
      y = run(in32, sample);
    } else {
      y = run(Rows<double>{inputs.rows, inputs.offsets, inputs.geometry}, sample);
    }
    if (y.rows() != static_cast<Eigen::Index>(inputs.count()))
      throw ConfigError("empirical NNGP needs a trailing global_average_pool or flatten readout");
    if (!y.allFinite()) throw NumericalError("empirical NNGP: non-finite network output in sample " +
                                             std::to_string(sample));
    return y;
  }
};

struct Moments {
  Matrix sum;
  Matrix sq;

  Moments& operator+=(const Moments& o) {
    sum += o.sum;
    sq += o.sq;
    return *this;
  }
};

EmpiricalKernel finish(const Moments& m, std::size_t n, std::size_t channels) {
  EmpiricalKernel k;
  const double dn = static_cast<double>(n);
  k.mean = m.sum / dn;
  k.samples = n;
  k.channels = channels;
  // One draw carries no spread information; its SE is reported as zero.
  if (n < 2) {
    k.se = Matrix::Zero(k.mean.rows(), k.mean.cols());
    return k;
  }
  const Matrix var = ((m.sq / dn - k.mean.cwiseProduct(k.mean)) * (dn / (dn - 1.0))).cwiseMax(0.0);
  k.se = (var / dn).cwiseSqrt();
  return k;
}

}  // namespace

Matrix sample_network_output(const Architecture& arch, const FiniteWidthSpec& widths, const InputStack& inputs,
                             std::uint64_t sample, const EmpiricalOptions& opts) {
  return Sampler(arch, widths, inputs, opts).output(sample);
}

std::vector<EmpiricalKernel> empirical_nngp_prefixes(const Architecture& arch, const FiniteWidthSpec& widths,
                                                     const InputStack& inputs, const std::vector<std::size_t>& counts,
                                                     const EmpiricalOptions& opts) {
  if (counts.empty()) throw ConfigError("empirical NNGP: no sample counts");
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (counts[i] == 0 || (i > 0 && counts[i] <= counts[i - 1]))
      throw ConfigError("empirical NNGP: sample counts must be positive and strictly increasing");
  const Sampler sampler(arch, widths, inputs, opts);

  // Chunk edges: multiples of kChunk plus every requested count, so each
  // prefix is a whole number of chunks and the reduction tree is fixed.
  std::vector<std::size_t> edges{0};
  for (std::size_t c = kChunk; c < counts.back(); c += kChunk) edges.push_back(c);
  edges.insert(edges.end(), counts.begin(), counts.end());
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  const auto n = static_cast<Eigen::Index>(inputs.count());
  std::vector<Moments> chunks(edges.size() - 1);
  std::size_t channels = 0;
  parallel_for(chunks.size(), opts.threads, [&](std::size_t c) {
    Moments m{Matrix::Zero(n, n), Matrix::Zero(n, n)};
    for (std::size_t s = edges[c]; s < edges[c + 1]; ++s) {
      const Matrix y = sampler.output(s);
      const Matrix k = y * y.transpose() / static_cast<double>(y.cols());
      m.sum += k;
      m.sq += k.cwiseProduct(k);
      if (c == 0 && s == 0) channels = static_cast<std::size_t>(y.cols());
    }
    chunks[c] = std::move(m);
  });

  std::vector<EmpiricalKernel> out;
  for (std::size_t count : counts) {
    const auto end = static_cast<std::size_t>(std::find(edges.begin(), edges.end(), count) - edges.begin());
    out.push_back(finish(pairwise_sum(chunks, 0, end), count, channels));
  }
  return out;
}

EmpiricalKernel empirical_nngp(const Architecture& arch, const FiniteWidthSpec& widths, const InputStack& inputs,
                               std::size_t n_samples, const EmpiricalOptions& opts) {
  return empirical_nngp_prefixes(arch, widths, inputs, {n_samples}, opts).front();
}

double kernel_distance(const Matrix& estimate, const Matrix& exact, double floor) {
  if (estimate.rows() != exact.rows() || estimate.cols() != exact.cols())
    throw ShapeError("kernel_distance: shape mismatch");
  const double den = exact.squaredNorm();
  if (!(den > 0)) throw NumericalError("kernel_distance: reference kernel is zero");
  const double num = (estimate - exact).squaredNorm();
  if (num == 0) return floor;
  return std::max(floor, std::log(num / den));
}

double relative_frobenius_error(const Matrix& estimate, const Matrix& exact) {
  if (estimate.rows() != exact.rows() || estimate.cols() != exact.cols())
    throw ShapeError("relative_frobenius_error: shape mismatch");
  const double den = exact.norm();
  if (!(den > 0)) throw NumericalError("relative_frobenius_error: reference kernel is zero");
  return (estimate - exact).norm() / den;
}

}  // namespace iak
