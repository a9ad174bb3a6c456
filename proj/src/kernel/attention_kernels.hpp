#pragma once

#include <cstddef>
#include <cstdint>

#include "kernel/architecture.hpp"
#include "kernel/kernel_state.hpp"

namespace iak {

// Row-wise softmax of scale * m, stabilized by subtracting each row maximum.
Matrix row_softmax(const Matrix& m, double scale);

// Applies zeta to a logit matrix (softmax per row, relu/identity entrywise).
Matrix apply_zeta(const Matrix& logits, Zeta zeta);

// Kernel blocks seen by one attention layer after positional encodings have
// been mixed in: query/key inputs (both same-input blocks and the cross block)
// and value inputs, each for the NNGP and the NTK.
struct AttentionOperands {
  Matrix qk_xx;
  Matrix qk_xpxp;
  Matrix qk;
  Matrix qk_ntk;
  Matrix val;
  Matrix val_ntk;
};
AttentionOperands attention_operands(const PairBlocks& in, const AttentionConfig& cfg);

// Deterministic-logit limit (d^-1 scaling, W^Q = W^K):
//   kappa' = v A val B^T,  Theta' = 2 kappa' + v A val_ntk B^T
// with A = zeta(sqrt(s) qk_xx), B = zeta(sqrt(s) qk_xpxp).
KernelBlock attention_d1_kernel(const PairBlocks& in, const AttentionConfig& cfg);

// Gaussian-logit limit (d^-1/2 scaling) with identity zeta, closed form.
KernelBlock attention_dhalf_kernel(const PairBlocks& in, const AttentionConfig& cfg);

// The same limit written through the general-zeta NTK expression
//   Theta_ab = 2 kappa_ab + v E[zeta val_ntk zeta'^T]_ab
//              + v s (2 qk_ab + qk_ntk_ab) E<M_a, val M'_b qk^T>
//              + v s qk_ab E<M_a, val M'_b qk_ntk^T>,
// M_a(c, d) = d zeta_ac / d G_ad, evaluated with the exact identity-zeta
// moments. Kept separate from the closed form so the two can be compared.
KernelBlock attention_dhalf_theorem_identity(const PairBlocks& in, const AttentionConfig& cfg);

// Monte-Carlo estimate of the d^-1/2 limit for any zeta: paired logit
// matrices (G(x), G(x')) are drawn jointly with covariance
// s * qk_ab * qk_ij, and the general-zeta NNGP/NTK expressions are averaged.
struct McAttentionEstimate {
  KernelBlock mean;
  Matrix nngp_se;
  Matrix ntk_se;
  std::size_t samples = 0;
};
McAttentionEstimate mc_attention_expectation(const PairBlocks& in, const AttentionConfig& cfg, std::size_t n_samples,
                                             std::uint64_t seed, std::size_t threads = 1);

// Default sample count for the d^-1/2 softmax expectation.
inline constexpr std::size_t kDefaultMcSamples = 2048;

// Dispatches on scaling and zeta. `stream_seed` keys the Monte-Carlo stream
// (callers fold in the layer index so layers draw independent logits).
KernelBlock attention_kernel(const PairBlocks& in, const AttentionConfig& cfg, std::uint64_t stream_seed);

// alpha K + (1 - alpha) R K R^T with the structured encoding covariance R.
KernelBlock residual_attention_kernel(const PairBlocks& in, const ResidualAttentionLayer& layer);

}  // namespace iak
