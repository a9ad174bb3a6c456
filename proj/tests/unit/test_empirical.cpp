#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "common/error.hpp"
#include "finite/empirical.hpp"
#include "kernel/engine.hpp"
#include "test_util.hpp"

using namespace iak;
using namespace iak::testing;

namespace {

Layer attention(QkScaling scaling, Zeta zeta, double s = 1.0, double v = 1.0, PositionalEncoding pe = {}) {
  AttentionConfig c;
  c.scaling = scaling;
  c.zeta = zeta;
  c.qk_var = s;
  c.ov_var = v;
  c.pe = pe;
  return Layer{AttentionLayer{c}};
}

std::vector<KernelInput> random_strings(std::size_t n, std::size_t len, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<KernelInput> xs;
  for (std::size_t i = 0; i < n; ++i) xs.push_back({random_matrix(len, d, gen), SpatialGeometry::string(len)});
  return xs;
}

// Fraction of entries with |a - b| <= z * se.
double within(const Matrix& a, const Matrix& b, const Matrix& se, double z) {
  return ((a - b).cwiseAbs().array() <= z * se.array()).cast<double>().mean();
}

}  // namespace

TEST_CASE("kernel distance") {
  std::mt19937_64 gen(1);
  const Matrix k = random_psd(5, gen);
  CHECK(kernel_distance(k, k) == kDistanceFloor);
  CHECK(kernel_distance(2 * k, k) == doctest::Approx(0.0).epsilon(1e-15));
  const Matrix e = random_psd(5, gen);
  double num = 0, den = 0;
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 5; ++j) {
      num += (e(i, j) - k(i, j)) * (e(i, j) - k(i, j));
      den += k(i, j) * k(i, j);
    }
  CHECK(kernel_distance(e, k) == doctest::Approx(std::log(num / den)).epsilon(1e-13));
  CHECK(relative_frobenius_error(e, k) == doctest::Approx(std::sqrt(num / den)).epsilon(1e-13));
  CHECK_THROWS_AS(kernel_distance(e, Matrix::Zero(5, 5)), NumericalError);
}

TEST_CASE("dense readout converges to the closed form") {
  Architecture a;
  a.layers.push_back(Layer{FlattenReadoutLayer{1.7, 0.3}});
  std::mt19937_64 gen(2);
  std::vector<KernelInput> xs;
  for (int i = 0; i < 6; ++i) xs.push_back({random_matrix(1, 4, gen), SpatialGeometry::image(1, 1)});
  const BatchKernels exact = propagate_batch(a, xs);
  for (auto sampler : {NngpSampler::Conditional, NngpSampler::Explicit}) {
    const EmpiricalKernel k = empirical_nngp(a, {8, 8, 1, 8, 3}, stack_inputs(xs), 20000, {7, 1, Precision::F64, sampler});
    CHECK(within(k.mean, exact.nngp, k.se, 3.0) == 1.0);
    CHECK(k.samples == 20000);
    CHECK(k.channels == 3);
  }
}

TEST_CASE("one draw with one channel is rank one") {
  Architecture a;
  a.layers.push_back(Layer{DenseLayer{1.0, 0.1}});
  a.layers.push_back(Layer{NonlinearityLayer{Nonlinearity::Relu}});
  a.layers.push_back(Layer{GlobalAveragePoolLayer{}});
  a.layers.push_back(Layer{DenseLayer{1.0, 0.0}});
  const auto xs = random_strings(5, 3, 4, 3);
  const EmpiricalKernel k = empirical_nngp(a, {16, 16, 1, 16, 1}, stack_inputs(xs), 1, {});
  Eigen::SelfAdjointEigenSolver<Matrix> es(k.mean);
  CHECK(std::abs(es.eigenvalues()(3)) < 1e-12 * es.eigenvalues()(4));
  CHECK(es.eigenvalues()(4) > 0);
  CHECK(k.se.norm() == 0.0);
}

TEST_CASE("identity d^-1/2 attention on raw inputs is unbiased at any width") {
  Architecture a;
  a.layers.push_back(attention(QkScaling::InvSqrtD, Zeta::Identity, 0.7, 1.3));
  a.layers.push_back(Layer{FlattenReadoutLayer{1.0, 0.0}});
  const auto xs = random_strings(6, 3, 5, 4);
  const BatchKernels exact = propagate_batch(a, xs);
  const EmpiricalKernel k = empirical_nngp(a, {6, 4, 2, 3, 2}, stack_inputs(xs), 10000, {8});
  CHECK(within(k.mean, exact.nngp, k.se, 4.0) >= 0.95);
}

TEST_CASE("conditional sampler matches explicit networks in distribution") {
  PositionalEncoding pe{PeKind::Structured, 0.6, 0.8, 2.0, true};
  PositionalEncoding pe_keys_only{PeKind::Random, 0.5, 0.7, 1.0, false};
  std::vector<std::pair<const char*, Architecture>> cases;
  {
    Architecture a;
    a.layers.push_back(Layer{ConvLayer{2, 1, Padding::Same, 1.5, 0.1}});
    a.layers.push_back(Layer{NonlinearityLayer{Nonlinearity::Relu}});
    a.layers.push_back(attention(QkScaling::InvSqrtD, Zeta::Softmax, 2.0, 1.0));
    a.layers.push_back(Layer{LayerNormLayer{}});
    a.layers.push_back(Layer{FlattenReadoutLayer{1.0, 0.2}});
    cases.emplace_back("conv softmax layernorm", a);
  }
  {
    Architecture a;
    a.layers.push_back(attention(QkScaling::InvD, Zeta::Softmax, 3.0, 1.0, pe));
    a.layers.push_back(Layer{NonlinearityLayer{Nonlinearity::Erf}});
    a.layers.push_back(Layer{ResidualLayer{0.3, std::make_shared<const Layer>(attention(QkScaling::InvSqrtD, Zeta::Relu))}});
    a.layers.push_back(Layer{GlobalAveragePoolLayer{}});
    a.layers.push_back(Layer{DenseLayer{1.0, 0.0}});
    cases.emplace_back("tied softmax with encodings, residual relu attention", a);
  }
  {
    Architecture a;
    a.layers.push_back(attention(QkScaling::InvD, Zeta::Identity, 1.0, 1.0, pe_keys_only));
    a.layers.push_back(Layer{ResidualAttentionLayer{0.4, 1.0, 2.0}});
    a.layers.push_back(Layer{FlattenReadoutLayer{1.0, 0.0}});
    cases.emplace_back("key-only encodings, residual attention", a);
  }
  const auto xs = random_strings(4, 3, 3, 5);
  const InputStack in = stack_inputs(xs);
  for (const auto& [name, a] : cases)
    for (std::size_t logit_dim : {2, 16}) {  // explicit logits and the Bartlett route
      CAPTURE(name);
      CAPTURE(logit_dim);
      const FiniteWidthSpec w{5, logit_dim, 2, 3, 2};
      const EmpiricalKernel c = empirical_nngp(a, w, in, 6000, {11, 1, Precision::F64, NngpSampler::Conditional});
      const EmpiricalKernel e = empirical_nngp(a, w, in, 6000, {12, 1, Precision::F64, NngpSampler::Explicit});
      const Matrix se = (c.se.cwiseProduct(c.se) + e.se.cwiseProduct(e.se)).cwiseSqrt();
      CHECK(within(c.mean, e.mean, se, 3.5) >= 0.9);
      CHECK(within(c.mean, e.mean, se, 5.0) == 1.0);
    }
}

TEST_CASE("estimates do not depend on thread count and prefixes are consistent") {
  Architecture a;
  a.layers.push_back(Layer{DenseLayer{1.0, 0.1}});
  a.layers.push_back(attention(QkScaling::InvSqrtD, Zeta::Softmax));
  a.layers.push_back(Layer{FlattenReadoutLayer{1.0, 0.0}});
  const InputStack in = stack_inputs(random_strings(4, 3, 3, 6));
  const FiniteWidthSpec w{8, 8, 2, 4, 2};
  const auto one = empirical_nngp_prefixes(a, w, in, {100, 300}, {3, 1});
  const auto three = empirical_nngp_prefixes(a, w, in, {100, 300}, {3, 3});
  CHECK((one[1].mean - three[1].mean).norm() == 0.0);
  CHECK((one[1].se - three[1].se).norm() == 0.0);
  const EmpiricalKernel alone = empirical_nngp(a, w, in, 100, {3, 2});
  CHECK((alone.mean - one[0].mean).norm() == 0.0);
  CHECK_THROWS_AS(empirical_nngp_prefixes(a, w, in, {300, 100}, {}), ConfigError);
}

TEST_CASE("single precision tracks double precision") {
  Architecture a;
  a.layers.push_back(Layer{DenseLayer{1.0, 0.1}});
  a.layers.push_back(Layer{NonlinearityLayer{Nonlinearity::Relu}});
  a.layers.push_back(attention(QkScaling::InvD, Zeta::Softmax));
  a.layers.push_back(Layer{GlobalAveragePoolLayer{}});
  const InputStack in = stack_inputs(random_strings(4, 3, 3, 7));
  const FiniteWidthSpec w{32, 32, 2, 8, 4};
  const EmpiricalKernel d = empirical_nngp(a, w, in, 50, {5, 1, Precision::F64});
  const EmpiricalKernel f = empirical_nngp(a, w, in, 50, {5, 1, Precision::F32});
  CHECK(rel_err(f.mean, d.mean) < 1e-4);
}

TEST_CASE("permuting output channels leaves the estimate unchanged") {
  Architecture a;
  a.layers.push_back(attention(QkScaling::InvSqrtD, Zeta::Softmax));
  a.layers.push_back(Layer{FlattenReadoutLayer{1.0, 0.3}});
  const InputStack in = stack_inputs(random_strings(5, 3, 3, 8));
  FiniteNetParams p = sample_params(a, {6, 6, 2, 3, 4}, SpatialGeometry::string(3), 3, 1);
  const Matrix y = forward(p, in).rows;
  std::vector<int> perm{2, 0, 3, 1};
  LayerParams& last = p.layers.back();
  const Matrix w = last.w;
  const Vector b = last.b;
  for (int c = 0; c < 4; ++c) {
    last.w.col(c) = w.col(perm[c]);
    last.b(c) = b(perm[c]);
  }
  const Matrix yp = forward(p, in).rows;
  CHECK(rel_err(yp * yp.transpose(), y * y.transpose()) < 1e-14);
}

TEST_CASE("readout is required") {
  Architecture a;
  a.layers.push_back(Layer{DenseLayer{1.0, 0.0}});
  CHECK_THROWS_AS(empirical_nngp(a, {4, 4, 1, 4, 1}, stack_inputs(random_strings(2, 3, 2, 9)), 1, {}), ConfigError);
}
