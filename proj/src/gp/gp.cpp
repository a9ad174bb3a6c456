#include "gp/gp.hpp"

#include <cmath>
#include <string>

#include "common/error.hpp"

namespace iak {

namespace {

bool try_solve(const Matrix& k, double lambda, const Matrix& rhs, Matrix& out) {
  Matrix a = k;
  a.diagonal().array() += lambda;
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) return false;
  out = llt.solve(rhs);
  return out.allFinite();
}

}  // namespace

EncodedTargets encode_targets(const std::vector<int>& labels, int classes) {
  if (classes < 2) throw ConfigError("need at least 2 classes, got " + std::to_string(classes));
  EncodedTargets t;
  t.classes = classes;
  t.y = Matrix::Constant(static_cast<Eigen::Index>(labels.size()), classes, -1.0 / classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw ConfigError("label " + std::to_string(labels[i]) + " at example " + std::to_string(i) +
                        " is outside [0, " + std::to_string(classes) + ")");
    t.y(static_cast<Eigen::Index>(i), labels[i]) = (classes - 1.0) / classes;
  }
  return t;
}

std::vector<int> decode_predictions(const Matrix& predictions) {
  std::vector<int> out(static_cast<std::size_t>(predictions.rows()));
  for (Eigen::Index i = 0; i < predictions.rows(); ++i) {
    Eigen::Index arg = 0;
    predictions.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

double accuracy(const Matrix& predictions, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(predictions.rows()) != labels.size())
    throw ShapeError("accuracy: " + std::to_string(predictions.rows()) + " predictions for " +
                     std::to_string(labels.size()) + " labels");
  if (labels.empty()) throw ShapeError("accuracy: no examples");
  const std::vector<int> decoded = decode_predictions(predictions);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += decoded[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

Matrix posterior_mean(const Matrix& k_train, const Matrix& k_test_train, const Matrix& y, double lambda) {
  const Eigen::Index n = k_train.rows();
  if (k_train.cols() != n || k_test_train.cols() != n || y.rows() != n)
    throw ShapeError("posterior_mean: kernel and target shapes disagree");
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw ConfigError("posterior_mean: lambda must be finite and >= 0");
  if ((k_train - k_train.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, k_train.cwiseAbs().maxCoeff()))
    throw NumericalError("posterior_mean: training kernel is not symmetric");
  Matrix alpha;
  if (!try_solve(k_train, lambda, y, alpha)) {
    const double retry = lambda > 0 ? lambda * (1.0 + 1e-6) : 1e-10 * k_train.diagonal().cwiseAbs().mean();
    if (!try_solve(k_train, retry, y, alpha))
      throw NumericalError("Cholesky factorization of K + lambda I failed (lambda = " + std::to_string(lambda) +
                           "); use a larger regularizer");
  }
  return k_test_train * alpha;
}

std::vector<double> regularizer_grid(const Matrix& k_train) {
  const double base = k_train.diagonal().mean();
  if (!(base > 0) || !std::isfinite(base)) throw NumericalError("regularizer grid: kernel mean trace must be positive");
  std::vector<double> grid;
  for (int e = -7; e <= 0; ++e) grid.push_back(std::pow(10.0, e) * base);
  return grid;
}

RegularizerChoice select_regularizer(const Matrix& k_fit, const Matrix& k_val_fit, const Matrix& y_fit,
                                     const std::vector<int>& val_labels, const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("select_regularizer: empty grid");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw ConfigError("select_regularizer: grid must be strictly increasing");
  RegularizerChoice c;
  c.grid = grid;
  bool any = false;
  for (double lambda : grid) {
    double acc = 0;
    try {
      acc = accuracy(posterior_mean(k_fit, k_val_fit, y_fit, lambda), val_labels);
    } catch (const NumericalError&) {
      c.accuracies.push_back(0.0);
      continue;
    }
    c.accuracies.push_back(acc);
    if (!any || acc > c.val_accuracy) {
      c.lambda = lambda;
      c.val_accuracy = acc;
      any = true;
    }
  }
  if (!any) throw NumericalError("select_regularizer: every regularizer failed to factorize");
  return c;
}

}  // namespace iak
