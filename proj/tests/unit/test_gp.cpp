#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <numeric>
#include <random>

#include "common/error.hpp"
#include "gp/gp.hpp"
#include "test_util.hpp"

using namespace iak;
using namespace iak::testing;

namespace {

Matrix well_conditioned_spd(Eigen::Index n, std::mt19937_64& gen) {
  const Matrix a = random_matrix(n, n, gen);
  return a * a.transpose() + static_cast<double>(n) * Matrix::Identity(n, n);
}

std::vector<int> random_labels(std::size_t n, int classes, std::mt19937_64& gen) {
  std::uniform_int_distribution<int> u(0, classes - 1);
  std::vector<int> out(n);
  for (auto& l : out) l = u(gen);
  return out;
}

}  // namespace

TEST_CASE("target encoding") {
  const EncodedTargets two = encode_targets({0}, 2);
  CHECK(two.y(0, 0) == 0.5);
  CHECK(two.y(0, 1) == -0.5);
  const EncodedTargets ten = encode_targets({3}, 10);
  for (int c = 0; c < 10; ++c) CHECK(ten.y(0, c) == doctest::Approx(c == 3 ? 0.9 : -0.1).epsilon(1e-15));
  std::mt19937_64 gen(1);
  const auto labels = random_labels(50, 7, gen);
  const EncodedTargets t = encode_targets(labels, 7);
  CHECK(t.y.rowwise().sum().cwiseAbs().maxCoeff() < 1e-15);
  CHECK(decode_predictions(t.y) == labels);
  CHECK_THROWS_AS(encode_targets({2}, 2), ConfigError);
  CHECK_THROWS_AS(encode_targets({0}, 1), ConfigError);
}

TEST_CASE("accuracy") {
  std::mt19937_64 gen(2);
  const auto labels = random_labels(100, 2, gen);
  const Matrix y = encode_targets(labels, 2).y;
  CHECK(accuracy(y, labels) == 1.0);
  CHECK(accuracy(-y, labels) == 0.0);
  const Matrix p = random_matrix(100, 4, gen);
  const auto l4 = random_labels(100, 4, gen);
  int hits = 0;
  for (int i = 0; i < 100; ++i) {
    int best = 0;
    for (int c = 1; c < 4; ++c)
      if (p(i, c) > p(i, best)) best = c;
    hits += best == l4[i];
  }
  CHECK(accuracy(p, l4) == hits / 100.0);
}

TEST_CASE("posterior mean") {
  std::mt19937_64 gen(3);
  const Eigen::Index n = 12;
  const Matrix k = well_conditioned_spd(n, gen);
  const Matrix ks = random_matrix(5, n, gen);
  const Matrix y = random_matrix(n, 3, gen);

  SUBCASE("identity kernel without regularizer") {
    CHECK((posterior_mean(Matrix::Identity(n, n), ks, y, 0.0) - ks * y).norm() < 1e-14);
  }
  SUBCASE("dense-inverse oracle") {
    const double lambda = 0.37;
    const Matrix oracle = ks * (k + lambda * Matrix::Identity(n, n)).inverse() * y;
    CHECK(rel_err(posterior_mean(k, ks, y, lambda), oracle) < 1e-10);
  }
  SUBCASE("interpolation limit") {
    const double lambda = 1e-10 * k.diagonal().mean();
    CHECK(rel_err(posterior_mean(k, k, y, lambda), y) < 1e-6);
  }
  SUBCASE("linear in the targets") {
    const Matrix y2 = random_matrix(n, 3, gen);
    const Matrix lhs = posterior_mean(k, ks, y + y2, 0.1);
    const Matrix rhs = posterior_mean(k, ks, y, 0.1) + posterior_mean(k, ks, y2, 0.1);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12 * std::max(1.0, lhs.cwiseAbs().maxCoeff()));
  }
  SUBCASE("invariant under permuting the training set") {
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    Eigen::PermutationMatrix<Eigen::Dynamic> p(n);
    for (Eigen::Index i = 0; i < n; ++i) p.indices()(i) = perm[i];
    const Matrix kp = p * k * p.transpose();
    const Matrix ksp = ks * p.transpose();
    CHECK(rel_err(posterior_mean(kp, ksp, p * y, 0.2), posterior_mean(k, ks, y, 0.2)) < 1e-12);
  }
  SUBCASE("larger regularizers shrink the fit") {
    double prev = std::numeric_limits<double>::infinity();
    for (double lambda : {1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0}) {
      const double norm = posterior_mean(k, k, y, lambda).norm();
      CHECK(norm < prev);
      prev = norm;
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(posterior_mean(-Matrix::Identity(n, n), ks, y, 0.0), NumericalError);
    CHECK_THROWS_AS(posterior_mean(k, ks, y, -1.0), ConfigError);
    CHECK_THROWS_AS(posterior_mean(k, ks.leftCols(3), y, 0.0), ShapeError);
    Matrix asym = k;
    asym(0, 1) += 1.0;
    CHECK_THROWS_AS(posterior_mean(asym, ks, y, 0.0), NumericalError);
  }
}

TEST_CASE("regularizer grid and selection") {
  std::mt19937_64 gen(4);
  const Matrix k = well_conditioned_spd(10, gen);
  const auto grid = regularizer_grid(k);
  REQUIRE(grid.size() == 8);
  CHECK(grid.front() == doctest::Approx(1e-7 * k.diagonal().mean()));
  CHECK(grid.back() == doctest::Approx(k.diagonal().mean()));
  for (std::size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] > grid[i - 1]);

  const auto labels = random_labels(10, 3, gen);
  const Matrix y = encode_targets(labels, 3).y;
  SUBCASE("singleton grid") {
    CHECK(select_regularizer(k, k, y, labels, {0.5}).lambda == 0.5);
  }
  SUBCASE("the strictly best value wins, ties go to the smaller one") {
    // Identity kernel: predictions Y / (1 + lambda), accuracy is flat in
    // lambda, so the smallest value is chosen.
    const Matrix id = Matrix::Identity(10, 10);
    CHECK(select_regularizer(id, id, y, labels, {0.1, 1.0, 10.0}).lambda == 0.1);
    // A negative-definite K + lambda I fails for small lambda and scores zero.
    const RegularizerChoice c = select_regularizer(-0.5 * id, id, y, labels, {0.1, 1.0, 10.0});
    CHECK(c.lambda == 1.0);
    CHECK(c.accuracies[0] == 0.0);
  }
  SUBCASE("separable toy data: selection attains the grid maximum") {
    // Two Gaussian blobs, linear kernel plus a constant.
    std::normal_distribution<double> nd;
    Matrix x(40, 2);
    std::vector<int> l(40);
    for (int i = 0; i < 40; ++i) {
      l[i] = i % 2;
      x(i, 0) = (l[i] ? 2.0 : -2.0) + 0.5 * nd(gen);
      x(i, 1) = nd(gen);
    }
    const Matrix kk = x * x.transpose() + Matrix::Ones(40, 40);
    const Matrix k_fit = kk.topLeftCorner(30, 30), k_val = kk.bottomLeftCorner(10, 30);
    const std::vector<int> fit_l(l.begin(), l.begin() + 30), val_l(l.begin() + 30, l.end());
    const Matrix yf = encode_targets(fit_l, 2).y;
    const auto g = regularizer_grid(k_fit);
    const RegularizerChoice c = select_regularizer(k_fit, k_val, yf, val_l, g);
    double best = 0;
    for (double lambda : g) best = std::max(best, accuracy(posterior_mean(k_fit, k_val, yf, lambda), val_l));
    CHECK(c.val_accuracy == best);
    CHECK(accuracy(posterior_mean(k_fit, k_val, yf, c.lambda), val_l) == best);
    CHECK(c.val_accuracy == 1.0);
  }
  CHECK_THROWS_AS(select_regularizer(k, k, y, labels, {1.0, 0.5}), ConfigError);
}
