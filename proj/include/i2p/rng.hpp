#pragma once

#include "i2p/types.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace i2p {

/// Deterministic random source. The engine (mt19937_64) has a standardized
/// output sequence, and every distribution here is derived from it with fixed
/// arithmetic, so streams are bit-identical across platforms and compilers —
/// std::uniform_real_distribution and friends carry no such guarantee.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next() { return gen_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::int64_t below(std::int64_t n) {
    return std::int64_t((static_cast<unsigned __int128>(next()) *
                         static_cast<unsigned __int128>(n)) >>
                        64);
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(std::int64_t(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  template <typename Scalar>
  void fill_uniform(RowMatrix<Scalar>& m, double lo, double hi) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<Scalar>(uniform(lo, hi));
  }

  template <typename Scalar>
  void fill_normal(RowMatrix<Scalar>& m, double mean = 0.0, double stddev = 1.0) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        m(r, c) = static_cast<Scalar>(mean + stddev * normal());
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace i2p
