#include "kernel/attention_kernels.hpp"

#include <cmath>
#include <vector>

#include "common/error.hpp"
#include "common/parallel.hpp"
#include "common/rng.hpp"
#include "kernel/pe_covariance.hpp"

namespace iak {

namespace {

constexpr double kJitter = 1e-10;
constexpr std::size_t kMcChunk = 64;

Matrix pe_block(const AttentionConfig& cfg, const SpatialGeometry& a, const SpatialGeometry& b) {
  const double rho = effective_pe_rho(cfg);
  if (cfg.pe.kind == PeKind::Random) return random_pe_covariance(a, b, rho);
  return structured_pe_covariance(a, b, rho, cfg.pe.phi);
}

// <M_a, val M'_b key^T> for every (a, b), given zeta outputs on both sides.
Matrix softmax_contraction(const Matrix& s, const Matrix& sp, const Matrix& val, const Matrix& key) {
  const Matrix h = val.cwiseProduct(key);
  const Matrix val_r = val * sp.transpose();
  const Matrix key_r = key * sp.transpose();
  const Matrix val_l = s * val;
  const Matrix key_l = s * key;
  return s * h * sp.transpose() - s * val_r.cwiseProduct(key_r) - val_l.cwiseProduct(key_l) * sp.transpose() +
         (s * val_r).cwiseProduct(s * key_r);
}

Matrix relu_contraction(const Matrix& gx, const Matrix& gxp, const Matrix& val, const Matrix& key) {
  const Matrix d = (gx.array() > 0.0).cast<double>().matrix();
  const Matrix dp = (gxp.array() > 0.0).cast<double>().matrix();
  return d * val.cwiseProduct(key) * dp.transpose();
}

struct McAccumulator {
  Matrix sum_k, sq_k, sum_t, sq_t;

  McAccumulator& operator+=(const McAccumulator& o) {
    sum_k += o.sum_k;
    sq_k += o.sq_k;
    sum_t += o.sum_t;
    sq_t += o.sq_t;
    return *this;
  }
};

// Factor L of the joint query/key covariance, so that sqrt(s) L Z L^T has
// entry covariance s * K_pr * K_qt.
Matrix logit_factor(const Matrix& k) {
  const double scale = std::max(1.0, k.cwiseAbs().maxCoeff());
  if (min_relative_eigenvalue(k) < -1e-8)
    throw NumericalError("attention: joint logit covariance is not positive semidefinite");
  Eigen::LLT<Matrix> llt(k + kJitter * scale * Matrix::Identity(k.rows(), k.cols()));
  if (llt.info() == Eigen::Success) return llt.matrixL();
  return psd_factor(k);
}

}  // namespace

Matrix row_softmax(const Matrix& m, double scale) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const Eigen::RowVectorXd z = scale * m.row(r);
    const double mx = z.maxCoeff();
    const Eigen::RowVectorXd e = (z.array() - mx).exp();
    out.row(r) = e / e.sum();
  }
  return out;
}

Matrix apply_zeta(const Matrix& logits, Zeta zeta) {
  switch (zeta) {
    case Zeta::Softmax: return row_softmax(logits, 1.0);
    case Zeta::Relu: return logits.cwiseMax(0.0);
    case Zeta::Identity: return logits;
  }
  return logits;
}

AttentionOperands attention_operands(const PairBlocks& in, const AttentionConfig& cfg) {
  AttentionOperands op{in.xx.nngp, in.xpxp.nngp, in.cross.nngp, in.cross.ntk, in.cross.nngp, in.cross.ntk};
  if (cfg.pe.kind == PeKind::None) return op;
  const double a = cfg.pe.alpha;
  const Matrix r_cross = pe_block(cfg, in.geom_x, in.geom_xp);
  op.qk_xx = interpolate(in.xx.nngp, a, in.self ? r_cross : pe_block(cfg, in.geom_x, in.geom_x));
  op.qk_xpxp = interpolate(in.xpxp.nngp, a, in.self ? r_cross : pe_block(cfg, in.geom_xp, in.geom_xp));
  op.qk = interpolate(in.cross.nngp, a, r_cross);
  op.qk_ntk = interpolate(in.cross.ntk, a, r_cross);
  if (cfg.pe.value_pe) {
    op.val = op.qk;
    op.val_ntk = op.qk_ntk;
  }
  return op;
}

KernelBlock attention_d1_kernel(const PairBlocks& in, const AttentionConfig& cfg) {
  const AttentionOperands op = attention_operands(in, cfg);
  // Untied query/key weights send the logits to zero in this limit.
  const double scale = cfg.tie_qk ? std::sqrt(cfg.qk_var) : 0.0;
  const Matrix a = apply_zeta(scale * op.qk_xx, cfg.zeta);
  const Matrix b = in.self ? a : apply_zeta(scale * op.qk_xpxp, cfg.zeta);
  KernelBlock out;
  out.nngp = cfg.ov_var * a * op.val * b.transpose();
  out.ntk = 2.0 * out.nngp + cfg.ov_var * a * op.val_ntk * b.transpose();
  return out;
}

KernelBlock attention_dhalf_kernel(const PairBlocks& in, const AttentionConfig& cfg) {
  const AttentionOperands op = attention_operands(in, cfg);
  const double vs = cfg.ov_var * cfg.qk_var;
  const double p = frobenius_inner(op.qk, op.val);
  KernelBlock out;
  out.nngp = vs * p * op.qk;
  out.ntk = 4.0 * out.nngp + vs * (frobenius_inner(op.val, op.qk_ntk) * op.qk + p * op.qk_ntk +
                                   frobenius_inner(op.qk, op.val_ntk) * op.qk);
  return out;
}

KernelBlock attention_dhalf_theorem_identity(const PairBlocks& in, const AttentionConfig& cfg) {
  const AttentionOperands op = attention_operands(in, cfg);
  const double s = cfg.qk_var, v = cfg.ov_var;
  const Eigen::Index n = op.qk.rows(), m = op.qk.cols();

  // E[zeta(G)_ai zeta(G')_bj] = s qk_ab qk_ij for identity zeta.
  auto second_moment = [&](Eigen::Index a, Eigen::Index b, const Matrix& w) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < m; ++j)
      for (Eigen::Index i = 0; i < n; ++i) acc += s * op.qk(a, b) * op.qk(i, j) * w(i, j);
    return acc;
  };
  // M_a = I on the key index for identity zeta.
  const Matrix m_a = Matrix::Identity(n, n);
  const Matrix m_b = Matrix::Identity(m, m);
  const double c_qk = frobenius_inner(m_a, op.val * m_b * op.qk.transpose());
  const double c_qk_ntk = frobenius_inner(m_a, op.val * m_b * op.qk_ntk.transpose());

  KernelBlock out{Matrix(n, m), Matrix(n, m)};
  for (Eigen::Index b = 0; b < m; ++b) {
    for (Eigen::Index a = 0; a < n; ++a) {
      const double kappa = v * second_moment(a, b, op.val);
      out.nngp(a, b) = kappa;
      out.ntk(a, b) = 2.0 * kappa + v * second_moment(a, b, op.val_ntk) +
                      v * s * (2.0 * op.qk(a, b) + op.qk_ntk(a, b)) * c_qk + v * s * op.qk(a, b) * c_qk_ntk;
    }
  }
  return out;
}

McAttentionEstimate mc_attention_expectation(const PairBlocks& in, const AttentionConfig& cfg, std::size_t n_samples,
                                             std::uint64_t seed, std::size_t threads) {
  if (n_samples == 0) throw ConfigError("attention: Monte-Carlo estimate needs at least one sample");
  const AttentionOperands op = attention_operands(in, cfg);
  const Eigen::Index n = op.qk.rows(), m = op.qk.cols();
  const double s = cfg.qk_var, v = cfg.ov_var, root_s = std::sqrt(s);

  Matrix joint;
  if (in.self) {
    joint = op.qk_xx;
  } else {
    joint.resize(n + m, n + m);
    joint << op.qk_xx, op.qk, op.qk.transpose(), op.qk_xpxp;
  }
  const Matrix l = logit_factor(joint);
  const Matrix weight_qk = 2.0 * op.qk + op.qk_ntk;
  const double id_qk = frobenius_inner(op.val, op.qk);
  const double id_qk_ntk = frobenius_inner(op.val, op.qk_ntk);

  const std::size_t n_chunks = (n_samples + kMcChunk - 1) / kMcChunk;
  std::vector<McAccumulator> chunks(n_chunks);
  parallel_for(n_chunks, threads, [&](std::size_t c) {
    McAccumulator acc{Matrix::Zero(n, m), Matrix::Zero(n, m), Matrix::Zero(n, m), Matrix::Zero(n, m)};
    const std::size_t end = std::min(n_samples, (c + 1) * kMcChunk);
    for (std::size_t k = c * kMcChunk; k < end; ++k) {
      NormalStream normal(stream_key(seed, {k}));
      const Matrix z = normal.matrix(l.cols(), l.cols());
      const Matrix g = root_s * l * z * l.transpose();
      const Matrix gx = g.topLeftCorner(n, n);
      const Matrix gxp = in.self ? gx : Matrix(g.bottomRightCorner(m, m));
      const Matrix sx = apply_zeta(gx, cfg.zeta);
      const Matrix sxp = in.self ? sx : apply_zeta(gxp, cfg.zeta);

      const Matrix kappa = v * sx * op.val * sxp.transpose();
      Matrix theta = 2.0 * kappa + v * sx * op.val_ntk * sxp.transpose();
      switch (cfg.zeta) {
        case Zeta::Softmax:
          theta += v * s * weight_qk.cwiseProduct(softmax_contraction(sx, sxp, op.val, op.qk));
          theta += v * s * op.qk.cwiseProduct(softmax_contraction(sx, sxp, op.val, op.qk_ntk));
          break;
        case Zeta::Relu:
          theta += v * s * weight_qk.cwiseProduct(relu_contraction(gx, gxp, op.val, op.qk));
          theta += v * s * op.qk.cwiseProduct(relu_contraction(gx, gxp, op.val, op.qk_ntk));
          break;
        case Zeta::Identity:
          theta += v * s * (id_qk * weight_qk + id_qk_ntk * op.qk);
          break;
      }
      acc.sum_k += kappa;
      acc.sq_k += kappa.cwiseProduct(kappa);
      acc.sum_t += theta;
      acc.sq_t += theta.cwiseProduct(theta);
    }
    chunks[c] = std::move(acc);
  });
  const McAccumulator total = pairwise_sum(chunks, 0, n_chunks);

  const double ns = static_cast<double>(n_samples);
  auto standard_error = [&](const Matrix& sum, const Matrix& sq) {
    if (n_samples < 2) return Matrix(Matrix::Zero(n, m));
    const Matrix mean = sum / ns;
    const Matrix var = ((sq / ns - mean.cwiseProduct(mean)) * (ns / (ns - 1.0))).cwiseMax(0.0);
    return Matrix((var / ns).cwiseSqrt());
  };
  McAttentionEstimate est;
  est.mean.nngp = total.sum_k / ns;
  est.mean.ntk = total.sum_t / ns;
  est.nngp_se = standard_error(total.sum_k, total.sq_k);
  est.ntk_se = standard_error(total.sum_t, total.sq_t);
  est.samples = n_samples;
  return est;
}

KernelBlock attention_kernel(const PairBlocks& in, const AttentionConfig& cfg, std::uint64_t stream_seed) {
  if (cfg.scaling == QkScaling::InvD) return attention_d1_kernel(in, cfg);
  if (cfg.zeta == Zeta::Identity) return attention_dhalf_kernel(in, cfg);
  return mc_attention_expectation(in, cfg, cfg.mc_samples, stream_seed).mean;
}

KernelBlock residual_attention_kernel(const PairBlocks& in, const ResidualAttentionLayer& layer) {
  const double a = layer.alpha;
  const Matrix r_x = structured_pe_covariance(in.geom_x, in.geom_x, layer.rho, layer.phi);
  const Matrix r_xp = in.self ? r_x : structured_pe_covariance(in.geom_xp, in.geom_xp, layer.rho, layer.phi);
  const Matrix conj = r_x * in.cross.nngp * r_xp.transpose();
  const Matrix conj_ntk = r_x * in.cross.ntk * r_xp.transpose();
  KernelBlock out;
  out.nngp = a * in.cross.nngp + (1.0 - a) * conj;
  const Matrix& direct = layer.reading == ResidualNtkReading::ConjugatedPart ? conj : out.nngp;
  out.ntk = 2.0 * (1.0 - a) * direct + a * in.cross.ntk + (1.0 - a) * conj_ntk;
  return out;
}

}  // namespace iak
