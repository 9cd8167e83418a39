#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "i2p/inflate.hpp"
#include "i2p/oracle.hpp"

#include <cmath>
#include <vector>

using namespace i2p;

TEST_CASE("dense conv3d: identity kernel and impulse response") {
  Rng rng(1);
  Dense4<double> x(2, 3, 3, 3);
  for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);

  RowMatrix<double> eye = RowMatrix<double>::Identity(2, 2);
  const auto y = oracle::dense_conv3d_ref(x, eye, 1, 1);
  CHECK(y.v == x.v);

  Dense4<double> impulse(1, 5, 5, 5);
  impulse.at(0, 2, 2, 2) = 1.0;
  RowMatrix<double> ones = RowMatrix<double>::Ones(1, 27);
  const auto spread = oracle::dense_conv3d_ref(impulse, ones, 3, 1);
  double total = 0.0;
  int hits = 0;
  for (int d = 0; d < 5; ++d)
    for (int h = 0; h < 5; ++h)
      for (int w = 0; w < 5; ++w) {
        const double v = spread.at(0, d, h, w);
        total += v;
        if (v != 0.0) {
          ++hits;
          CHECK(v == 1.0);
          CHECK(std::abs(d - 2) <= 1);
          CHECK(std::abs(h - 2) <= 1);
          CHECK(std::abs(w - 2) <= 1);
        }
      }
  CHECK(hits == 27);
  CHECK(total == 27.0);
}

TEST_CASE("dense conv2d: identity and constant-image averaging") {
  Dense4<double> x(1, 1, 4, 4);
  for (auto& v : x.v) v = 3.5;

  RowMatrix<double> one(1, 1);
  one << 1.0;
  const auto y = oracle::dense_conv2d_ref(x, one, 1, 1);
  CHECK(y.v == x.v);

  RowMatrix<double> avg = RowMatrix<double>::Constant(1, 9, 1.0 / 9.0);
  const auto z = oracle::dense_conv2d_ref(x, avg, 3, 1);
  // interior pixels see the full window of the constant image
  CHECK(z.at(0, 0, 1, 1) == doctest::Approx(3.5).epsilon(1e-12));
  CHECK(z.at(0, 0, 2, 2) == doctest::Approx(3.5).epsilon(1e-12));
  CHECK(z.at(0, 0, 0, 0) == doctest::Approx(3.5 * 4.0 / 9.0).epsilon(1e-12));
}

TEST_CASE("dense deconv: impulse spreads once per offset") {
  Dense4<double> x(1, 1, 1, 1);
  x.at(0, 0, 0, 0) = 2.0;
  RowMatrix<double> ones = RowMatrix<double>::Ones(1, 8);
  const auto y = oracle::dense_deconv_ref(x, ones, 2, 2);
  REQUIRE(y.D == 2);
  REQUIRE(y.H == 2);
  REQUIRE(y.W == 2);
  for (double v : y.v) CHECK(v == 2.0);
}

TEST_CASE("projection equivalence is exact for replicated filters") {
  Rng rng(7);

  // degenerate depth: one z window
  {
    Dense4<double> x(2, 1, 6, 6);
    for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
    auto w2d = testutil::random_matrix<double>(3, 2 * 9, rng);
    CHECK(oracle::projection_equivalence_check(w2d, 2, 3, x) <= 1e-12);
  }

  // random 8^3 inputs
  for (int trial = 0; trial < 5; ++trial) {
    Dense4<double> x(2, 8, 8, 8);
    for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
    auto w2d = testutil::random_matrix<double>(3, 2 * 9, rng);
    CHECK(oracle::projection_equivalence_check(w2d, 2, 3, x) <= 1e-10);
  }

  // negative control: a random (non-replicated) 3D filter violates it badly
  {
    Dense4<double> x(2, 8, 8, 8);
    for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
    auto w2d = testutil::random_matrix<double>(3, 2 * 9, rng);
    auto w3d = testutil::random_matrix<double>(3, 2 * 27, rng);
    CHECK(oracle::projection_deviation(x, w3d, w2d, 3) > 1e-2);
  }
}

TEST_CASE("projection equivalence with an explicitly inflated filter") {
  Rng rng(9);
  Dense4<double> x(1, 6, 6, 6);
  for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
  auto w2d = testutil::random_matrix<double>(2, 9, rng);
  const RowMatrix<double> w3d = inflate::apply_transform(
      w2d, 1, 3, inflate::transform_matrix<double>(inflate::TransformKind::Default, 3));
  CHECK(oracle::projection_deviation(x, w3d, w2d, 3) <= 1e-10);
}

TEST_CASE("finite differences: quadratic, linear, and non-finite inputs") {
  Rng rng(11);
  std::vector<double> p(6);
  for (auto& v : p) v = rng.uniform(-2.0, 2.0);

  const auto quad = [](const std::vector<double>& q) {
    double s = 0.0;
    for (double v : q) s += v * v;
    return 0.5 * s;
  };
  const auto grad = oracle::finite_diff(quad, p);
  for (std::size_t i = 0; i < p.size(); ++i)
    CHECK(std::abs(grad[i] - p[i]) / std::max(std::abs(p[i]), 1e-9) <= 1e-9);

  std::vector<double> c(6);
  for (auto& v : c) v = rng.uniform(-1.0, 1.0);
  const auto lin = [&](const std::vector<double>& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += c[i] * q[i];
    return s;
  };
  const auto lgrad = oracle::finite_diff(lin, p);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(lgrad[i] - c[i]) <= 1e-9);

  const auto bad = [](const std::vector<double>&) {
    return std::numeric_limits<double>::quiet_NaN();
  };
  CHECK_THROWS_AS((void)oracle::finite_diff(bad, p), NumericError);
}

TEST_CASE("oracle references reject mismatched weights") {
  Dense4<double> x(2, 3, 3, 3);
  RowMatrix<double> w(1, 5);
  CHECK_THROWS_AS((void)oracle::dense_conv3d_ref(x, w, 3, 1), ShapeError);
  CHECK_THROWS_AS((void)oracle::dense_deconv_ref(x, w, 2, 2), ShapeError);
}
