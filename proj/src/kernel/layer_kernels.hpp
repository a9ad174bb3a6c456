#pragma once

#include "kernel/architecture.hpp"
#include "kernel/kernel_state.hpp"

namespace iak {

// Each transform maps the cross block of a pair view to its new value. Blocks
// that need same-input diagonals (nonlinearities, layer norm) read them from
// the view; applied to PairBlocks::diagonal they produce the new diagonal.

KernelBlock dense_kernel(const KernelBlock& in, double weight_var, double bias_var);

// Closed-form expectations for a ReLU or Erf unit together with the derivative
// kernel used for the NTK (Theta' = kdot * Theta).
KernelBlock relu_kernel(const PairBlocks& in);
KernelBlock erf_kernel(const PairBlocks& in);
KernelBlock nonlinearity_kernel(const PairBlocks& in, Nonlinearity kind);

// Scalar forms of the same maps, on a correlation pair (k_aa, k_bb, k_ab).
struct ScalarKernel {
  double value;
  double derivative;
};
ScalarKernel relu_scalar(double k_aa, double k_bb, double k_ab);
ScalarKernel erf_scalar(double k_aa, double k_bb, double k_ab);

// Input positions feeding output position `out` along one axis; entries are
// -1 where the filter hangs over zero padding.
std::vector<long> conv_axis_patch(std::size_t n, const ConvLayer& conv, std::size_t out);

// Flattened input positions feeding each output position (row-major for
// images); -1 marks zero padding. Every list has d_f entries.
std::vector<std::vector<long>> conv_patch_lists(const SpatialGeometry& g, const ConvLayer& conv);

KernelBlock conv_kernel(const KernelBlock& in, const SpatialGeometry& gx, const SpatialGeometry& gxp,
                        const ConvLayer& conv);

KernelBlock layernorm_kernel(const PairBlocks& in, LayerNormNtk mode = LayerNormNtk::OwnDiagonal);

// Mean over every entry of the cross block (1x1 result).
KernelBlock gap_kernel(const KernelBlock& in);

// sigma_w^2 * mean of the cross-block diagonal + sigma_b^2. The two inputs
// must have the same spatial size.
KernelBlock flatten_readout_kernel(const KernelBlock& in, double weight_var, double bias_var);

}  // namespace iak
