#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Dense>

#include "common/linalg.hpp"
#include "common/rng.hpp"

// Building blocks of the conditional network sampler: exact Gaussian draws of
// linear maps given the Gram matrix of their input.
namespace iak::conditional {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
inline Mat<T> normals(std::uint64_t key, Eigen::Index rows, Eigen::Index cols) {
  NormalStream s(key);
  Mat<T> m(rows, cols);
  s.fill(m);
  return m;
}

// F with F F^T = x x^T and at most min(rows, cols) columns.
template <typename T>
inline Mat<T> gram_factor(const Mat<T>& x) {
  if (x.cols() <= x.rows()) return x;
  const Matrix g = (x * x.transpose()).template cast<double>();
  Eigen::LLT<Matrix> llt(g);
  if (llt.info() == Eigen::Success) {
    const Matrix l = llt.matrixL();
    if (l.allFinite()) return l.cast<T>();
  }
  return psd_factor(g).cast<T>();
}

// c X W for W with i.i.d. standard-normal entries, as c F Z.
template <typename T>
inline Mat<T> sample_linear(const Mat<T>& x, Eigen::Index d_out, double c, std::uint64_t key) {
  const Mat<T> f = gram_factor(x);
  return static_cast<T>(c) * (f * normals<T>(key, f.cols(), d_out));
}

template <typename T>
inline void add_bias(Mat<T>& y, double bias_var, std::uint64_t key) {
  if (bias_var <= 0) return;
  const Mat<T> b = normals<T>(key, 1, y.cols());
  y.rowwise() += static_cast<T>(std::sqrt(bias_var)) * b.row(0);
}

// Z1 Z2^T (or Z1 Z1^T when tied) for Z1, Z2 with r rows and dg i.i.d.
// standard-normal columns. For dg >= r, Z1 = A O with A the Bartlett factor
// of Z1 Z1^T and O Haar-distributed orthonormal rows, so O Z2^T is an r x r
// standard-normal matrix independent of A.
template <typename T>
inline Mat<T> logit_core(Eigen::Index r, Eigen::Index dg, bool tied, NormalStream& s) {
  if (dg >= r) {
    Mat<T> a = Mat<T>::Zero(r, r);
    for (Eigen::Index i = 0; i < r; ++i) {
      a(i, i) = static_cast<T>(std::sqrt(s.chi_squared(static_cast<double>(dg - i))));
      for (Eigen::Index j = 0; j < i; ++j) a(i, j) = static_cast<T>(s());
    }
    if (tied) return a * a.transpose();
    Mat<T> z(r, r);
    s.fill(z);
    return a * z;
  }
  Mat<T> z1(r, dg);
  s.fill(z1);
  if (tied) return z1 * z1.transpose();
  Mat<T> z2(r, dg);
  s.fill(z2);
  return z1 * z2.transpose();
}

}  // namespace iak::conditional
