#include "finite/finite_net.hpp"

#include <cmath>
#include <numbers>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "kernel/attention_kernels.hpp"
#include "kernel/layer_kernels.hpp"
#include "kernel/pe_covariance.hpp"

namespace iak {

namespace {

enum Tensor : std::uint64_t { kW = 1, kB, kQ, kK, kV, kO, kPe };

bool is_parameterized(const Layer& l) {
  return std::holds_alternative<DenseLayer>(l.kind) || std::holds_alternative<ConvLayer>(l.kind) ||
         std::holds_alternative<AttentionLayer>(l.kind) || std::holds_alternative<FlattenReadoutLayer>(l.kind);
}

std::size_t filter_positions(const ConvLayer& c, const SpatialGeometry& g) {
  return g.kind == GeometryKind::Image ? c.filter_size * c.filter_size : c.filter_size;
}

Layer translate(const Layer& l) {
  if (const auto* ra = std::get_if<ResidualAttentionLayer>(&l.kind)) {
    AttentionConfig cfg;
    cfg.scaling = QkScaling::InvD;
    cfg.zeta = Zeta::Identity;
    cfg.pe = {PeKind::Structured, 0.0, ra->rho, ra->phi, false};
    return Layer{ResidualLayer{ra->alpha, std::make_shared<const Layer>(Layer{AttentionLayer{cfg}})}};
  }
  return l;
}

PlannedLayer plan_one(const Layer& raw, std::size_t in_dim, std::size_t out_dim, const SpatialGeometry& g, long index) {
  PlannedLayer p;
  p.layer = translate(raw);
  p.in_dim = in_dim;
  p.in_geometry = g;
  if (const auto* r = std::get_if<ResidualLayer>(&p.layer.kind)) {
    p.out_dim = in_dim;
    p.inner.push_back(plan_one(*r->inner, in_dim, in_dim, g, index));
  } else {
    p.out_dim = is_parameterized(p.layer) ? out_dim : in_dim;
  }
  return p;
}

LayerParams sample_layer(const PlannedLayer& p, const FiniteWidthSpec& w, std::uint64_t key) {
  LayerParams out;
  auto normal = [&](Tensor t, std::uint64_t head, Eigen::Index r, Eigen::Index c) {
    NormalStream s(stream_key(key, {t, head}));
    return s.matrix(r, c);
  };
  const auto in = static_cast<Eigen::Index>(p.in_dim);
  const auto outd = static_cast<Eigen::Index>(p.out_dim);
  std::visit(
      [&](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, DenseLayer> || std::is_same_v<T, ConvLayer> ||
                      std::is_same_v<T, FlattenReadoutLayer>) {
          Eigen::Index fan = in;
          if constexpr (std::is_same_v<T, ConvLayer>)
            fan = in * static_cast<Eigen::Index>(filter_positions(l, p.in_geometry));
          if constexpr (std::is_same_v<T, FlattenReadoutLayer>)
            fan = in * static_cast<Eigen::Index>(p.in_geometry.size());
          out.w = normal(kW, 0, fan, outd);
          if (l.bias_var > 0) out.b = normal(kB, 0, outd, 1).col(0);
        } else if constexpr (std::is_same_v<T, AttentionLayer>) {
          const auto& cfg = l.config;
          const auto dg = static_cast<Eigen::Index>(w.logit_dim);
          const auto dv = static_cast<Eigen::Index>(w.value_dim);
          out.heads.resize(w.heads);
          for (std::size_t h = 0; h < w.heads; ++h) {
            out.heads[h].wq = normal(kQ, h, in, dg);
            if (!qk_tied(cfg)) out.heads[h].wk = normal(kK, h, in, dg);
            out.heads[h].wv = normal(kV, h, in, dv);
          }
          out.wo = normal(kO, 0, static_cast<Eigen::Index>(w.heads) * dv, outd);
          if (cfg.pe.kind != PeKind::None) {
            out.pe_factor = pe_factor(cfg, p.in_geometry);
            out.pe_tilde = normal(kPe, 0, out.pe_factor.cols(), in);
          }
        } else if constexpr (std::is_same_v<T, ResidualLayer>) {
          out.inner.push_back(sample_layer(p.inner[0], w, stream_key(key, {0x5e5})));
        }
      },
      p.layer.kind);
  return out;
}

Matrix seg_sum(const Matrix& m, const std::vector<std::size_t>& offs) {
  const std::size_t n = offs.size() - 1;
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out(i, j) = m.block(offs[i], offs[j], offs[i + 1] - offs[i], offs[j + 1] - offs[j]).sum();
  return out;
}

// Gradient consumer for one backward pass: either accumulates the
// Jacobian Gram matrix or explicit parameter gradients.
struct Sink {
  Matrix* gram = nullptr;

  // Y = c X W: contributes c^2 <X X^T, dY dY^T> per input pair.
  void linear(const Matrix& x, const Matrix& dy, double c, const std::vector<std::size_t>& offs, Matrix* grad) const {
    if (gram) *gram += c * c * seg_sum((x * x.transpose()).cwiseProduct(dy * dy.transpose()), offs);
    if (grad) *grad += c * x.transpose() * dy;
  }

  void bias(const Matrix& dy, double c, const std::vector<std::size_t>& offs, Vector* grad) const {
    if (gram) *gram += c * c * seg_sum(dy * dy.transpose(), offs);
    if (grad) *grad += c * dy.colwise().sum().transpose();
  }
};

struct HeadCache {
  Matrix q, k, v;
  std::vector<Matrix> g, a;  // per input
};

struct LayerCache {
  InputStack in;
  Matrix x;       // layer-specific linear input (patches / flattened rows)
  Matrix in_qk, in_v;
  std::vector<HeadCache> heads;
  Matrix h;
  Matrix ln_out;
  Vector ln_inv;
  std::vector<LayerCache> inner;
};

Matrix conv_patches(const InputStack& in, const ConvLayer& c, InputStack& out) {
  const Eigen::Index d = in.rows.cols();
  std::vector<std::vector<std::vector<long>>> all(in.count());
  out.offsets.assign(1, 0);
  out.geometry.clear();
  for (std::size_t n = 0; n < in.count(); ++n) {
    all[n] = conv_patch_lists(in.geometry[n], c);
    out.geometry.push_back(layer_output_geometry(Layer{c}, in.geometry[n], -1));
    out.offsets.push_back(out.offsets.back() + all[n].size());
  }
  const Eigen::Index df = static_cast<Eigen::Index>(all[0][0].size());
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(out.offsets.back()), df * d);
  for (std::size_t n = 0; n < in.count(); ++n)
    for (std::size_t a = 0; a < all[n].size(); ++a)
      for (Eigen::Index i = 0; i < df; ++i) {
        const long u = all[n][a][i];
        if (u >= 0) x.block(out.offsets[n] + a, i * d, 1, d) = in.rows.row(in.begin(n) + u);
      }
  return x;
}

Matrix conv_patches_backward(const InputStack& in, const ConvLayer& c, const Matrix& dx_patches) {
  const Eigen::Index d = in.rows.cols();
  Matrix dx = Matrix::Zero(in.rows.rows(), d);
  Eigen::Index row = 0;
  for (std::size_t n = 0; n < in.count(); ++n)
    for (const auto& p : conv_patch_lists(in.geometry[n], c)) {
      for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] >= 0) dx.row(in.begin(n) + p[i]) += dx_patches.block(row, static_cast<Eigen::Index>(i) * d, 1, d);
      ++row;
    }
  return dx;
}

InputStack one_row_per_input(const InputStack& in, Matrix rows) {
  InputStack out;
  out.rows = std::move(rows);
  out.offsets.resize(in.count() + 1);
  for (std::size_t n = 0; n <= in.count(); ++n) out.offsets[n] = n;
  out.geometry.assign(in.count(), SpatialGeometry::vector());
  return out;
}

void require_fixed_geometry(const InputStack& in, const SpatialGeometry& g, const char* what) {
  for (const auto& gi : in.geometry)
    if (gi != g)
      throw ShapeError(std::string(what) + " needs every input to have geometry " + g.describe() + ", got " +
                       gi.describe());
}

InputStack forward_layer(const PlannedLayer& p, const LayerParams& w, const FiniteWidthSpec& widths,
                         const InputStack& in, LayerCache* cache);

InputStack forward_attention(const PlannedLayer& p, const AttentionConfig& cfg, const LayerParams& w,
                             const FiniteWidthSpec& widths, const InputStack& in, LayerCache* cache) {
  const AttentionScales sc = attention_scales(cfg, p.in_dim, widths);
  const double c_qk = sc.qk, c_v = sc.value, c_o = sc.out, denom = sc.denominator;

  Matrix in_qk = in.rows;
  if (cfg.pe.kind != PeKind::None) {
    require_fixed_geometry(in, p.in_geometry, "positional encodings");
    const Matrix pe = w.pe_factor * w.pe_tilde;
    in_qk = std::sqrt(cfg.pe.alpha) * in.rows;
    for (std::size_t n = 0; n < in.count(); ++n)
      in_qk.middleRows(in.begin(n), in.size(n)) += std::sqrt(1.0 - cfg.pe.alpha) * pe;
  }
  const bool value_from_qk = cfg.pe.kind == PeKind::None || cfg.pe.value_pe;
  const Matrix& in_v = value_from_qk ? in_qk : in.rows;

  const auto dv = static_cast<Eigen::Index>(widths.value_dim);
  Matrix h(in.rows.rows(), static_cast<Eigen::Index>(widths.heads) * dv);
  if (cache) cache->heads.resize(widths.heads);
  for (std::size_t hd = 0; hd < widths.heads; ++hd) {
    const HeadParams& hp = w.heads[hd];
    const Matrix q = c_qk * in_qk * hp.wq;
    const Matrix k = hp.wk.size() ? Matrix(c_qk * in_qk * hp.wk) : q;
    const Matrix v = c_v * in_v * hp.wv;
    HeadCache* hc = cache ? &cache->heads[hd] : nullptr;
    for (std::size_t n = 0; n < in.count(); ++n) {
      const Eigen::Index b = in.begin(n), s = in.size(n);
      const Matrix g = q.middleRows(b, s) * k.middleRows(b, s).transpose() / denom;
      const Matrix a = apply_zeta(g, cfg.zeta);
      h.block(b, static_cast<Eigen::Index>(hd) * dv, s, dv) = a * v.middleRows(b, s);
      if (hc) {
        hc->g.push_back(g);
        hc->a.push_back(a);
      }
    }
    if (hc) {
      hc->q = q;
      hc->k = k;
      hc->v = v;
    }
  }
  InputStack out{c_o * h * w.wo, in.offsets, in.geometry};
  if (cache) {
    cache->in_qk = in_qk;
    if (!value_from_qk) cache->in_v = in_v;
    cache->h = std::move(h);
  }
  return out;
}

InputStack forward_layer(const PlannedLayer& p, const LayerParams& w, const FiniteWidthSpec& widths,
                         const InputStack& in, LayerCache* cache) {
  if (cache) cache->in = in;
  return std::visit(
      [&](const auto& l) -> InputStack {
        using T = std::decay_t<decltype(l)>;
        const double d = static_cast<double>(p.in_dim);
        if constexpr (std::is_same_v<T, DenseLayer>) {
          InputStack out{std::sqrt(l.weight_var / d) * in.rows * w.w, in.offsets, in.geometry};
          if (w.b.size()) out.rows.rowwise() += std::sqrt(l.bias_var) * w.b.transpose();
          return out;
        } else if constexpr (std::is_same_v<T, NonlinearityLayer>) {
          InputStack out = in;
          switch (l.kind) {
            case Nonlinearity::Relu: out.rows = in.rows.cwiseMax(0.0); break;
            case Nonlinearity::Erf: out.rows = in.rows.unaryExpr([](double v) { return std::erf(v); }); break;
            case Nonlinearity::Identity: break;
          }
          return out;
        } else if constexpr (std::is_same_v<T, ConvLayer>) {
          InputStack out;
          Matrix x = conv_patches(in, l, out);
          const double df = static_cast<double>(x.cols()) / d;
          out.rows = std::sqrt(l.weight_var / (df * d)) * x * w.w;
          if (w.b.size()) out.rows.rowwise() += std::sqrt(l.bias_var) * w.b.transpose();
          if (cache) cache->x = std::move(x);
          return out;
        } else if constexpr (std::is_same_v<T, AttentionLayer>) {
          return forward_attention(p, l.config, w, widths, in, cache);
        } else if constexpr (std::is_same_v<T, LayerNormLayer>) {
          InputStack out = in;
          Vector inv(in.rows.rows());
          for (Eigen::Index r = 0; r < in.rows.rows(); ++r) {
            const double mean = in.rows.row(r).mean();
            const double var = (in.rows.row(r).array() - mean).square().mean();
            inv(r) = 1.0 / std::sqrt(var + kLayerNormEps);
            out.rows.row(r) = (in.rows.row(r).array() - mean) * inv(r);
          }
          if (cache) {
            cache->ln_out = out.rows;
            cache->ln_inv = inv;
          }
          return out;
        } else if constexpr (std::is_same_v<T, GlobalAveragePoolLayer>) {
          Matrix rows(in.count(), in.rows.cols());
          for (std::size_t n = 0; n < in.count(); ++n) rows.row(n) = in.rows.middleRows(in.begin(n), in.size(n)).colwise().mean();
          return one_row_per_input(in, std::move(rows));
        } else if constexpr (std::is_same_v<T, FlattenReadoutLayer>) {
          require_fixed_geometry(in, p.in_geometry, "flatten");
          const Eigen::Index ds = static_cast<Eigen::Index>(p.in_geometry.size());
          const Eigen::Index dd = in.rows.cols();
          Matrix x(in.count(), ds * dd);
          for (std::size_t n = 0; n < in.count(); ++n)
            for (Eigen::Index a = 0; a < ds; ++a) x.block(n, a * dd, 1, dd) = in.rows.row(in.begin(n) + a);
          Matrix rows = std::sqrt(l.weight_var / static_cast<double>(ds * dd)) * x * w.w;
          if (w.b.size()) rows.rowwise() += std::sqrt(l.bias_var) * w.b.transpose();
          if (cache) cache->x = std::move(x);
          return one_row_per_input(in, std::move(rows));
        } else if constexpr (std::is_same_v<T, ResidualLayer>) {
          LayerCache* ic = nullptr;
          if (cache) {
            cache->inner.resize(1);
            ic = &cache->inner[0];
          }
          InputStack inner = forward_layer(p.inner[0], w.inner[0], widths, in, ic);
          inner.rows = std::sqrt(l.alpha) * in.rows + std::sqrt(1.0 - l.alpha) * inner.rows;
          return inner;
        } else {
          throw ConfigError("finite network: residual_attention must be planned first");
        }
      },
      p.layer.kind);
}

Matrix zeta_backward(const Matrix& g, const Matrix& a, const Matrix& da, Zeta zeta) {
  switch (zeta) {
    case Zeta::Softmax: {
      const Vector inner = a.cwiseProduct(da).rowwise().sum();
      return a.cwiseProduct(da.colwise() - inner);
    }
    case Zeta::Relu: return da.cwiseProduct((g.array() > 0.0).cast<double>().matrix());
    case Zeta::Identity: return da;
  }
  return da;
}

Matrix backward_layer(const PlannedLayer& p, const LayerParams& w, const FiniteWidthSpec& widths,
                      const LayerCache& c, const InputStack& out, const Matrix& dy, const Sink& sink,
                      LayerParams* grad);

Matrix backward_attention(const PlannedLayer& p, const AttentionConfig& cfg, const LayerParams& w,
                          const FiniteWidthSpec& widths, const LayerCache& c, const Matrix& dy, const Sink& sink,
                          LayerParams* grad) {
  const InputStack& in = c.in;
  const AttentionScales sc = attention_scales(cfg, p.in_dim, widths);
  const double c_qk = sc.qk, c_v = sc.value, c_o = sc.out, denom = sc.denominator;
  const bool value_from_qk = cfg.pe.kind == PeKind::None || cfg.pe.value_pe;
  const Matrix& in_v = value_from_qk ? c.in_qk : c.in_v;

  sink.linear(c.h, dy, c_o, in.offsets, grad ? &grad->wo : nullptr);
  const Matrix dh = c_o * dy * w.wo.transpose();
  const auto dv = static_cast<Eigen::Index>(widths.value_dim);

  Matrix d_qk = Matrix::Zero(in.rows.rows(), in.rows.cols());
  Matrix d_v = Matrix::Zero(in.rows.rows(), in.rows.cols());
  for (std::size_t hd = 0; hd < widths.heads; ++hd) {
    const HeadParams& hp = w.heads[hd];
    const HeadCache& hc = c.heads[hd];
    Matrix dq = Matrix::Zero(hc.q.rows(), hc.q.cols());
    Matrix dk = Matrix::Zero(hc.k.rows(), hc.k.cols());
    Matrix dval = Matrix::Zero(hc.v.rows(), hc.v.cols());
    for (std::size_t n = 0; n < in.count(); ++n) {
      const Eigen::Index b = in.begin(n), s = in.size(n);
      const Matrix dout = dh.block(b, static_cast<Eigen::Index>(hd) * dv, s, dv);
      const Matrix da = dout * hc.v.middleRows(b, s).transpose();
      dval.middleRows(b, s) = hc.a[n].transpose() * dout;
      const Matrix dg = zeta_backward(hc.g[n], hc.a[n], da, cfg.zeta) / denom;
      dq.middleRows(b, s) = dg * hc.k.middleRows(b, s);
      dk.middleRows(b, s) = dg.transpose() * hc.q.middleRows(b, s);
    }
    HeadParams* gh = grad ? &grad->heads[hd] : nullptr;
    if (hp.wk.size() == 0) {
      const Matrix dsum = dq + dk;
      sink.linear(c.in_qk, dsum, c_qk, in.offsets, gh ? &gh->wq : nullptr);
      d_qk += c_qk * dsum * hp.wq.transpose();
    } else {
      sink.linear(c.in_qk, dq, c_qk, in.offsets, gh ? &gh->wq : nullptr);
      sink.linear(c.in_qk, dk, c_qk, in.offsets, gh ? &gh->wk : nullptr);
      d_qk += c_qk * (dq * hp.wq.transpose() + dk * hp.wk.transpose());
    }
    sink.linear(in_v, dval, c_v, in.offsets, gh ? &gh->wv : nullptr);
    d_v += c_v * dval * hp.wv.transpose();
  }

  if (cfg.pe.kind == PeKind::None) return d_qk + d_v;
  if (value_from_qk) d_qk += d_v;
  const double a = cfg.pe.alpha;
  const double root = std::sqrt(1.0 - a);
  // P = L P~ is shared by all inputs.
  if (sink.gram) {
    const Matrix r = w.pe_factor * w.pe_factor.transpose();
    const std::size_t n = in.count();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        (*sink.gram)(i, j) += (1.0 - a) * r.cwiseProduct(d_qk.middleRows(in.begin(i), in.size(i)) *
                                                         d_qk.middleRows(in.begin(j), in.size(j)).transpose())
                                              .sum();
  }
  if (grad) {
    for (std::size_t i = 0; i < in.count(); ++i)
      grad->pe_tilde += root * w.pe_factor.transpose() * d_qk.middleRows(in.begin(i), in.size(i));
  }
  Matrix dx = std::sqrt(a) * d_qk;
  if (!value_from_qk) dx += d_v;
  return dx;
}

Matrix backward_layer(const PlannedLayer& p, const LayerParams& w, const FiniteWidthSpec& widths,
                      const LayerCache& c, const InputStack& out, const Matrix& dy, const Sink& sink,
                      LayerParams* grad) {
  const InputStack& in = c.in;
  const double d = static_cast<double>(p.in_dim);
  return std::visit(
      [&](const auto& l) -> Matrix {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, DenseLayer>) {
          const double cw = std::sqrt(l.weight_var / d);
          sink.linear(in.rows, dy, cw, in.offsets, grad ? &grad->w : nullptr);
          if (w.b.size()) sink.bias(dy, std::sqrt(l.bias_var), in.offsets, grad ? &grad->b : nullptr);
          return cw * dy * w.w.transpose();
        } else if constexpr (std::is_same_v<T, NonlinearityLayer>) {
          switch (l.kind) {
            case Nonlinearity::Relu: return dy.cwiseProduct((in.rows.array() > 0.0).cast<double>().matrix());
            case Nonlinearity::Erf: {
              const double k = 2.0 / std::sqrt(std::numbers::pi);
              return dy.cwiseProduct(in.rows.unaryExpr([k](double v) { return k * std::exp(-v * v); }));
            }
            case Nonlinearity::Identity: return dy;
          }
          return dy;
        } else if constexpr (std::is_same_v<T, ConvLayer>) {
          const double cw = std::sqrt(l.weight_var / static_cast<double>(c.x.cols()));
          sink.linear(c.x, dy, cw, out.offsets, grad ? &grad->w : nullptr);
          if (w.b.size()) sink.bias(dy, std::sqrt(l.bias_var), out.offsets, grad ? &grad->b : nullptr);
          return conv_patches_backward(in, l, cw * dy * w.w.transpose());
        } else if constexpr (std::is_same_v<T, AttentionLayer>) {
          return backward_attention(p, l.config, w, widths, c, dy, sink, grad);
        } else if constexpr (std::is_same_v<T, LayerNormLayer>) {
          Matrix dx(dy.rows(), dy.cols());
          for (Eigen::Index r = 0; r < dy.rows(); ++r) {
            const auto y = c.ln_out.row(r).array();
            const auto g = dy.row(r).array();
            dx.row(r) = c.ln_inv(r) * (g - g.mean() - y * (g * y).mean());
          }
          return dx;
        } else if constexpr (std::is_same_v<T, GlobalAveragePoolLayer>) {
          Matrix dx(in.rows.rows(), in.rows.cols());
          for (std::size_t n = 0; n < in.count(); ++n)
            dx.middleRows(in.begin(n), in.size(n)).rowwise() = dy.row(n) / static_cast<double>(in.size(n));
          return dx;
        } else if constexpr (std::is_same_v<T, FlattenReadoutLayer>) {
          const double cw = std::sqrt(l.weight_var / static_cast<double>(c.x.cols()));
          sink.linear(c.x, dy, cw, out.offsets, grad ? &grad->w : nullptr);
          if (w.b.size()) sink.bias(dy, std::sqrt(l.bias_var), out.offsets, grad ? &grad->b : nullptr);
          const Matrix dflat = cw * dy * w.w.transpose();
          const Eigen::Index dd = in.rows.cols();
          Matrix dx(in.rows.rows(), dd);
          for (std::size_t n = 0; n < in.count(); ++n)
            for (Eigen::Index a = 0; a < in.size(n); ++a) dx.row(in.begin(n) + a) = dflat.block(n, a * dd, 1, dd);
          return dx;
        } else if constexpr (std::is_same_v<T, ResidualLayer>) {
          const Matrix inner = backward_layer(p.inner[0], w.inner[0], widths, c.inner[0], in,
                                              std::sqrt(1.0 - l.alpha) * dy, sink, grad ? &grad->inner[0] : nullptr);
          return std::sqrt(l.alpha) * dy + inner;
        } else {
          throw ConfigError("finite network: residual_attention must be planned first");
        }
      },
      p.layer.kind);
}

struct ForwardTrace {
  std::vector<LayerCache> caches;
  std::vector<InputStack> outputs;
};

ForwardTrace forward_trace(const FiniteNetParams& params, const InputStack& inputs) {
  ForwardTrace t;
  t.caches.resize(params.plan.size());
  const InputStack* cur = &inputs;
  for (std::size_t i = 0; i < params.plan.size(); ++i) {
    t.outputs.push_back(forward_layer(params.plan[i], params.layers[i], params.widths, *cur, &t.caches[i]));
    cur = &t.outputs.back();
  }
  return t;
}

void backward(const FiniteNetParams& params, const ForwardTrace& t, Matrix dy, const Sink& sink,
              std::vector<LayerParams>* grads) {
  for (std::size_t i = params.plan.size(); i-- > 0;)
    dy = backward_layer(params.plan[i], params.layers[i], params.widths, t.caches[i], t.outputs[i], dy, sink,
                        grads ? &(*grads)[i] : nullptr);
}

void check_stack(const FiniteNetParams& params, const InputStack& inputs) {
  if (inputs.count() == 0) throw ShapeError("finite network: no inputs");
  if (static_cast<std::size_t>(inputs.rows.cols()) != params.d0)
    throw ShapeError("finite network: inputs have " + std::to_string(inputs.rows.cols()) +
                     " channels, parameters expect " + std::to_string(params.d0));
}

LayerParams zeros_like(const LayerParams& p) {
  LayerParams z;
  z.w = Matrix::Zero(p.w.rows(), p.w.cols());
  z.b = Vector::Zero(p.b.size());
  for (const auto& h : p.heads)
    z.heads.push_back({Matrix::Zero(h.wq.rows(), h.wq.cols()), Matrix::Zero(h.wk.rows(), h.wk.cols()),
                       Matrix::Zero(h.wv.rows(), h.wv.cols())});
  z.wo = Matrix::Zero(p.wo.rows(), p.wo.cols());
  z.pe_tilde = Matrix::Zero(p.pe_tilde.rows(), p.pe_tilde.cols());
  z.pe_factor = p.pe_factor;
  for (const auto& in : p.inner) z.inner.push_back(zeros_like(in));
  return z;
}

}  // namespace

bool qk_tied(const AttentionConfig& cfg) { return cfg.scaling == QkScaling::InvD && cfg.tie_qk; }

Matrix pe_factor(const AttentionConfig& cfg, const SpatialGeometry& g) {
  const double rho = effective_pe_rho(cfg);
  return psd_factor(cfg.pe.kind == PeKind::Random ? random_pe_covariance(g, g, rho)
                                                  : structured_pe_covariance(g, g, rho, cfg.pe.phi));
}

AttentionScales attention_scales(const AttentionConfig& cfg, std::size_t in_dim, const FiniteWidthSpec& widths) {
  const double d = static_cast<double>(in_dim);
  const double dg = static_cast<double>(widths.logit_dim);
  return {std::pow(cfg.qk_var, 0.25) / std::sqrt(d), std::sqrt(cfg.ov_var / d),
          1.0 / std::sqrt(static_cast<double>(widths.heads * widths.value_dim)),
          cfg.scaling == QkScaling::InvD ? dg : std::sqrt(dg)};
}

FiniteWidthSpec FiniteWidthSpec::sqrt_heads(std::size_t width, std::size_t output_channels) {
  const auto r = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(width))));
  return {width, width, std::max<std::size_t>(1, r), std::max<std::size_t>(1, r), output_channels};
}

void FiniteWidthSpec::validate() const {
  if (width == 0 || logit_dim == 0 || heads == 0 || value_dim == 0 || output_channels == 0)
    throw ConfigError("finite widths must all be >= 1");
}

InputStack stack_inputs(const std::vector<KernelInput>& inputs, bool standardize) {
  if (inputs.empty()) throw ShapeError("no inputs");
  InputStack s;
  s.offsets.push_back(0);
  Eigen::Index rows = 0;
  for (const auto& x : inputs) rows += x.values.rows();
  s.rows.resize(rows, inputs[0].values.cols());
  for (const auto& x : inputs) {
    if (x.values.cols() != inputs[0].values.cols()) throw ShapeError("inputs have different embedding dimensions");
    if (static_cast<std::size_t>(x.values.rows()) != x.geometry.size() || x.values.rows() == 0)
      throw ShapeError("input rows do not match geometry " + x.geometry.describe());
    s.rows.middleRows(static_cast<Eigen::Index>(s.offsets.back()), x.values.rows()) =
        standardize ? standardize_positions(x.values) : x.values;
    s.offsets.push_back(s.offsets.back() + static_cast<std::size_t>(x.values.rows()));
    s.geometry.push_back(x.geometry);
  }
  return s;
}

std::vector<PlannedLayer> plan_layers(const Architecture& arch, const FiniteWidthSpec& widths,
                                      const SpatialGeometry& geometry, std::size_t d0) {
  arch.validate();
  widths.validate();
  long last = -1;
  for (std::size_t i = 0; i < arch.layers.size(); ++i)
    if (is_parameterized(arch.layers[i])) last = static_cast<long>(i);
  std::vector<PlannedLayer> plan;
  std::size_t dim = d0;
  SpatialGeometry g = geometry;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const std::size_t out = static_cast<long>(i) == last ? widths.output_channels : widths.width;
    plan.push_back(plan_one(arch.layers[i], dim, out, g, static_cast<long>(i)));
    dim = plan.back().out_dim;
    g = layer_output_geometry(arch.layers[i], g, static_cast<long>(i));
  }
  return plan;
}

FiniteNetParams sample_params(const Architecture& arch, const FiniteWidthSpec& widths, const SpatialGeometry& geometry,
                              std::size_t d0, std::uint64_t seed, std::uint64_t sample) {
  FiniteNetParams p;
  p.plan = plan_layers(arch, widths, geometry, d0);
  p.widths = widths;
  p.input_geometry = geometry;
  p.d0 = d0;
  for (std::size_t i = 0; i < p.plan.size(); ++i)
    p.layers.push_back(sample_layer(p.plan[i], widths, stream_key(seed, {sample, i})));
  return p;
}

InputStack forward(const FiniteNetParams& params, const InputStack& inputs) {
  check_stack(params, inputs);
  InputStack cur = inputs;
  for (std::size_t i = 0; i < params.plan.size(); ++i)
    cur = forward_layer(params.plan[i], params.layers[i], params.widths, cur, nullptr);
  return cur;
}

Matrix empirical_ntk(const FiniteNetParams& params, const InputStack& inputs) {
  check_stack(params, inputs);
  const ForwardTrace t = forward_trace(params, inputs);
  const InputStack& out = t.outputs.empty() ? inputs : t.outputs.back();
  if (out.rows.rows() != static_cast<Eigen::Index>(inputs.count()))
    throw ConfigError("empirical NTK needs a trailing global_average_pool or flatten readout");
  const Eigen::Index n = out.rows.rows(), channels = out.rows.cols();
  Matrix gram = Matrix::Zero(n, n);
  Sink sink{&gram};
  for (Eigen::Index ch = 0; ch < channels; ++ch) {
    Matrix dy = Matrix::Zero(n, channels);
    dy.col(ch).setOnes();
    backward(params, t, dy, sink, nullptr);
  }
  return gram / static_cast<double>(channels);
}

std::size_t parameter_count(const FiniteNetParams& params) {
  std::size_t count = 0;
  FiniteNetParams& p = const_cast<FiniteNetParams&>(params);
  for_each_parameter(p, [&](double*, Eigen::Index size) { count += static_cast<std::size_t>(size); });
  return count;
}

Vector parameter_gradient(const FiniteNetParams& params, const InputStack& inputs, std::size_t index,
                          std::size_t channel) {
  check_stack(params, inputs);
  const ForwardTrace t = forward_trace(params, inputs);
  const InputStack& out = t.outputs.empty() ? inputs : t.outputs.back();
  if (index >= inputs.count() || static_cast<Eigen::Index>(channel) >= out.rows.cols())
    throw ShapeError("parameter_gradient: index or channel out of range");
  Matrix dy = Matrix::Zero(out.rows.rows(), out.rows.cols());
  dy.block(out.begin(index), static_cast<Eigen::Index>(channel), out.size(index), 1).setOnes();

  FiniteNetParams grads;
  for (const auto& l : params.layers) grads.layers.push_back(zeros_like(l));
  backward(params, t, dy, Sink{}, &grads.layers);

  Vector flat(static_cast<Eigen::Index>(parameter_count(params)));
  Eigen::Index pos = 0;
  for_each_parameter(grads, [&](double* data, Eigen::Index size) {
    flat.segment(pos, size) = Eigen::Map<Vector>(data, size);
    pos += size;
  });
  return flat;
}

}  // namespace iak
