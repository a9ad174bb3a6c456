#include "kernel/architecture.hpp"

#include <cmath>

#include "common/error.hpp"

namespace iak {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require_positive(double v, const char* what, std::size_t index) {
  if (!(v > 0.0) || !std::isfinite(v))
    throw ConfigError("layer " + std::to_string(index) + ": " + what + " must be positive, got " + std::to_string(v));
}

void require_unit(double v, const char* what, std::size_t index) {
  if (!(v >= 0.0 && v <= 1.0))
    throw ConfigError("layer " + std::to_string(index) + ": " + what + " must lie in [0, 1], got " + std::to_string(v));
}

void validate_layer(const Layer& layer, std::size_t i) {
  std::visit(overloaded{
                 [&](const DenseLayer& l) {
                   require_positive(l.weight_var, "weight variance", i);
                   if (l.bias_var < 0) throw ConfigError("layer " + std::to_string(i) + ": negative bias variance");
                 },
                 [&](const NonlinearityLayer&) {},
                 [&](const ConvLayer& l) {
                   require_positive(l.weight_var, "weight variance", i);
                   if (l.bias_var < 0) throw ConfigError("layer " + std::to_string(i) + ": negative bias variance");
                   if (l.filter_size == 0 || l.stride == 0)
                     throw ConfigError("layer " + std::to_string(i) + ": filter size and stride must be >= 1");
                 },
                 [&](const AttentionLayer& l) {
                   const auto& c = l.config;
                   require_positive(c.qk_var, "qk variance", i);
                   require_positive(c.ov_var, "ov variance", i);
                   if (c.pe.kind != PeKind::None) {
                     require_unit(c.pe.alpha, "alpha", i);
                     require_positive(c.pe.rho, "rho", i);
                     if (c.pe.kind == PeKind::Structured) require_positive(c.pe.phi, "phi", i);
                   }
                   if (c.scaling == QkScaling::InvSqrtD && c.zeta != Zeta::Identity && c.mc_samples == 0)
                     throw ConfigError("layer " + std::to_string(i) +
                                       ": d^-1/2 attention with non-identity zeta needs mc_samples > 0");
                 },
                 [&](const LayerNormLayer&) {},
                 [&](const GlobalAveragePoolLayer&) {},
                 [&](const FlattenReadoutLayer& l) {
                   require_positive(l.weight_var, "weight variance", i);
                   if (l.bias_var < 0) throw ConfigError("layer " + std::to_string(i) + ": negative bias variance");
                 },
                 [&](const ResidualLayer& l) {
                   require_unit(l.alpha, "alpha", i);
                   if (!l.inner) throw ConfigError("layer " + std::to_string(i) + ": residual without inner layer");
                   if (std::holds_alternative<GlobalAveragePoolLayer>(l.inner->kind) ||
                       std::holds_alternative<FlattenReadoutLayer>(l.inner->kind))
                     throw ConfigError("layer " + std::to_string(i) + ": residual cannot wrap a pooling layer");
                   validate_layer(*l.inner, i);
                 },
                 [&](const ResidualAttentionLayer& l) {
                   require_unit(l.alpha, "alpha", i);
                   require_positive(l.rho, "rho", i);
                   require_positive(l.phi, "phi", i);
                 },
             },
             layer.kind);
}

bool is_pool(const Layer& l) {
  return std::holds_alternative<GlobalAveragePoolLayer>(l.kind) || std::holds_alternative<FlattenReadoutLayer>(l.kind);
}

bool allowed_after_pool(const Layer& l) {
  return std::holds_alternative<DenseLayer>(l.kind) || std::holds_alternative<NonlinearityLayer>(l.kind) ||
         std::holds_alternative<LayerNormLayer>(l.kind);
}

std::size_t conv_output_size(std::size_t n, const ConvLayer& c, long index) {
  std::size_t out = 0;
  if (c.padding == Padding::Valid) {
    if (n >= c.filter_size) out = (n - c.filter_size) / c.stride + 1;
  } else {
    out = (n + c.stride - 1) / c.stride;
  }
  if (out == 0) throw ShapeError("convolution produces an empty output", index);
  return out;
}

}  // namespace

std::string Layer::name() const {
  return std::visit(overloaded{
                        [](const DenseLayer&) { return std::string("dense"); },
                        [](const NonlinearityLayer& l) {
                          switch (l.kind) {
                            case Nonlinearity::Relu: return std::string("relu");
                            case Nonlinearity::Erf: return std::string("erf");
                            case Nonlinearity::Identity: return std::string("identity");
                          }
                          return std::string("nonlinearity");
                        },
                        [](const ConvLayer&) { return std::string("conv"); },
                        [](const AttentionLayer&) { return std::string("attention"); },
                        [](const LayerNormLayer&) { return std::string("layer_norm"); },
                        [](const GlobalAveragePoolLayer&) { return std::string("global_average_pool"); },
                        [](const FlattenReadoutLayer&) { return std::string("flatten"); },
                        [](const ResidualLayer&) { return std::string("residual"); },
                        [](const ResidualAttentionLayer&) { return std::string("residual_attention"); },
                    },
                    kind);
}

void Architecture::validate() const {
  bool pooled = false;
  bool seen_gap = false;
  bool seen_flatten = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    validate_layer(l, i);
    if (pooled && !allowed_after_pool(l))
      throw ConfigError("layer " + std::to_string(i) + ": " + l.name() +
                        " cannot follow global_average_pool/flatten (only dense, nonlinearity, layer_norm)");
    if (std::holds_alternative<GlobalAveragePoolLayer>(l.kind)) {
      if (seen_gap) throw ConfigError("layer " + std::to_string(i) + ": global_average_pool appears twice");
      seen_gap = true;
    }
    if (std::holds_alternative<FlattenReadoutLayer>(l.kind)) {
      if (seen_flatten) throw ConfigError("layer " + std::to_string(i) + ": flatten appears twice");
      seen_flatten = true;
    }
    if (is_pool(l)) pooled = true;
  }
}

SpatialGeometry layer_output_geometry(const Layer& layer, const SpatialGeometry& in, long index) {
  return std::visit(
      overloaded{
          [&](const ConvLayer& c) -> SpatialGeometry {
            if (in.kind == GeometryKind::Vector) throw ShapeError("convolution needs an image or string input", index);
            if (in.kind == GeometryKind::Image)
              return SpatialGeometry::image(conv_output_size(in.height, c, index), conv_output_size(in.width, c, index));
            return SpatialGeometry::string(conv_output_size(in.length, c, index));
          },
          [&](const AttentionLayer&) -> SpatialGeometry {
            if (in.kind == GeometryKind::Vector) throw ShapeError("attention needs an image or string input", index);
            return in;
          },
          [&](const ResidualAttentionLayer&) -> SpatialGeometry {
            if (in.kind == GeometryKind::Vector)
              throw ShapeError("residual attention needs an image or string input", index);
            return in;
          },
          [&](const ResidualLayer& r) -> SpatialGeometry {
            SpatialGeometry out = layer_output_geometry(*r.inner, in, index);
            if (out != in) throw ShapeError("residual inner layer changes the spatial geometry", index);
            return out;
          },
          [&](const GlobalAveragePoolLayer&) -> SpatialGeometry { return SpatialGeometry::vector(); },
          [&](const FlattenReadoutLayer&) -> SpatialGeometry { return SpatialGeometry::vector(); },
          [&](const auto&) -> SpatialGeometry { return in; },
      },
      layer.kind);
}

SpatialGeometry Architecture::output_geometry(const SpatialGeometry& input, std::size_t upto) const {
  SpatialGeometry g = input;
  for (std::size_t i = 0; i < upto && i < layers.size(); ++i) g = layer_output_geometry(layers[i], g, static_cast<long>(i));
  return g;
}

double effective_pe_rho(const AttentionConfig& cfg) {
  if (cfg.pe.kind == PeKind::Structured && cfg.zeta == Zeta::Softmax) return cfg.pe.rho / cfg.qk_var;
  return cfg.pe.rho;
}

}  // namespace iak
