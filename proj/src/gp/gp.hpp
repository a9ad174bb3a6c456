#pragma once

#include <cstddef>
#include <vector>

#include "common/linalg.hpp"

namespace iak {

// One row per example: (C-1)/C at the label, -1/C elsewhere.
struct EncodedTargets {
  Matrix y;
  int classes = 0;
};

EncodedTargets encode_targets(const std::vector<int>& labels, int classes);

// Row-wise argmax (first maximum on ties).
std::vector<int> decode_predictions(const Matrix& predictions);

double accuracy(const Matrix& predictions, const std::vector<int>& labels);

// K_* (K + lambda I)^-1 Y via Cholesky. A failed factorization is retried
// once with lambda (1 + 1e-6) (or a 1e-10 * mean-diagonal jitter when
// lambda = 0) before throwing NumericalError.
Matrix posterior_mean(const Matrix& k_train, const Matrix& k_test_train, const Matrix& y, double lambda);

// {1e-7, ..., 1} times the mean diagonal of k_train.
std::vector<double> regularizer_grid(const Matrix& k_train);

struct RegularizerChoice {
  double lambda = 0;
  double val_accuracy = 0;
  std::vector<double> grid;
  std::vector<double> accuracies;  // per grid value
};

// Fits on (k_fit, y_fit), scores every grid value on the validation rows and
// returns the most accurate one; ties go to the smaller lambda. Grid values
// whose factorization fails score zero.
RegularizerChoice select_regularizer(const Matrix& k_fit, const Matrix& k_val_fit, const Matrix& y_fit,
                                     const std::vector<int>& val_labels, const std::vector<double>& grid);

}  // namespace iak
