#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "kernel/geometry.hpp"

namespace iak {

enum class Nonlinearity { Relu, Erf, Identity };
enum class Padding { Same, Valid };
enum class QkScaling { InvD, InvSqrtD };
enum class Zeta { Softmax, Identity, Relu };
enum class PeKind { None, Random, Structured };

// How LayerNorm normalizes the NTK block. The overview table divides Theta by
// its own diagonals; a finite LayerNorm net instead rescales gradients by the
// NNGP diagonals.
enum class LayerNormNtk { OwnDiagonal, NngpDiagonal };

// Which NNGP output enters the 2(1-alpha)*kappa term of the residual NTK.
enum class ResidualNtkReading { ConjugatedPart, FullOutput };

struct PositionalEncoding {
  PeKind kind = PeKind::None;
  double alpha = 1.0;    // interpolation weight on the layer input kernel
  double rho = 1.0;      // user-facing scale (see effective_pe_rho)
  double phi = 1.0;      // decay rate (structured only)
  bool value_pe = true;  // also feed encodings into the values
};

struct AttentionConfig {
  QkScaling scaling = QkScaling::InvD;
  Zeta zeta = Zeta::Softmax;
  double qk_var = 1.0;  // sigma_Q^2 sigma_K^2
  double ov_var = 1.0;  // sigma_O^2 sigma_V^2
  PositionalEncoding pe;
  // d^-1 only: W^Q = W^K at initialization. When false the logits collapse to
  // zero in the limit and softmax attention becomes uniform.
  bool tie_qk = true;
  std::size_t mc_samples = 2048;  // d^-1/2 with non-identity zeta; 0 is rejected there
  std::uint64_t mc_seed = 0;
};

struct DenseLayer {
  double weight_var = 1.0;
  double bias_var = 0.0;
};

struct NonlinearityLayer {
  Nonlinearity kind = Nonlinearity::Relu;
};

struct ConvLayer {
  std::size_t filter_size = 3;  // per spatial dimension
  std::size_t stride = 1;
  Padding padding = Padding::Same;
  double weight_var = 1.0;
  double bias_var = 0.0;
};

struct AttentionLayer {
  AttentionConfig config;
};

struct LayerNormLayer {
  LayerNormNtk ntk = LayerNormNtk::OwnDiagonal;
};

struct GlobalAveragePoolLayer {};

struct FlattenReadoutLayer {
  double weight_var = 1.0;
  double bias_var = 0.0;
};

struct Layer;

// sqrt(alpha) * input + sqrt(1 - alpha) * inner(input).
struct ResidualLayer {
  double alpha = 0.5;
  std::shared_ptr<const Layer> inner;
};

// Closed-form residual attention kernel: alpha*K + (1-alpha) R K R^T with R the
// structured positional-encoding covariance.
struct ResidualAttentionLayer {
  double alpha = 0.5;
  double rho = 1.0;
  double phi = 1.0;
  ResidualNtkReading reading = ResidualNtkReading::ConjugatedPart;
};

struct Layer {
  std::variant<DenseLayer, NonlinearityLayer, ConvLayer, AttentionLayer, LayerNormLayer, GlobalAveragePoolLayer,
               FlattenReadoutLayer, ResidualLayer, ResidualAttentionLayer>
      kind;

  std::string name() const;
};

struct Architecture {
  std::vector<Layer> layers;

  // Throws ConfigError on invalid hyperparameters or layer ordering.
  void validate() const;

  // Geometry after layer `upto` (exclusive) given the input geometry; throws
  // ShapeError naming the first layer that cannot accept its input.
  SpatialGeometry output_geometry(const SpatialGeometry& input, std::size_t upto) const;
  SpatialGeometry output_geometry(const SpatialGeometry& input) const {
    return output_geometry(input, layers.size());
  }
};

SpatialGeometry layer_output_geometry(const Layer& layer, const SpatialGeometry& in, long index);

// rho actually used to build R for an attention layer. Softmax attention with
// structured encodings takes rho as reported relative to sigma_Q^2 sigma_K^2.
double effective_pe_rho(const AttentionConfig& cfg);

}  // namespace iak
