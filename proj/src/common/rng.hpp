#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

#include <Eigen/Dense>
#include <boost/random/normal_distribution.hpp>

namespace iak {

// SplitMix64 finalizer; used both as the stream-key hash and as the
// counter-to-bits mixing function.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Folds a seed and any number of stream identifiers (sample index, tensor id,
// layer index, ...) into one key. Distinct id tuples give independent streams.
inline std::uint64_t stream_key(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) noexcept {
  std::uint64_t k = mix64(seed ^ 0x243f6a8885a308d3ULL);
  for (auto id : ids) k = mix64(k ^ mix64(id + 0x13198a2e03707344ULL));
  return k;
}

// Counter-based generator: output i of a stream is a pure function of
// (key, i), so a stream can be split across threads without changing results.
// This is SplitMix64 started at `key`.
// Satisfies UniformRandomBitGenerator so it plugs into <random> distributions.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(key), counter_(counter) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept { return mix64(key_ + 0x9e3779b97f4a7c15ULL * counter_++); }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

// Standard-normal stream bound to one counter stream (ziggurat sampler).
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t key) : rng_(key) {}

  double operator()() { return dist_(rng_); }

  template <typename Derived>
  void fill(Eigen::MatrixBase<Derived>& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<typename Derived::Scalar>(dist_(rng_));
  }

  Eigen::MatrixXd matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    fill(m);
    return m;
  }

  // Chi-square with `dof` degrees of freedom, drawn from the same stream.
  double chi_squared(double dof) {
    std::chi_squared_distribution<double> chi(dof);
    return chi(rng_);
  }

 private:
  CounterRng rng_;
  boost::random::normal_distribution<double> dist_;
};

}  // namespace iak
