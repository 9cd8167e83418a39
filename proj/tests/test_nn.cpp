#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "i2p/kernel_map.hpp"
#include "i2p/nn.hpp"
#include "i2p/oracle.hpp"
#include "i2p/voxel.hpp"

#include <algorithm>
#include <vector>

using namespace i2p;
using nn::KernelMap;
using voxel::SparseVoxelTensor;

namespace {

/// Run the sparse conv on a scene and compare every active output value with
/// the dense reference on the zero-filled grid.
template <typename Scalar>
double sparse_dense_gap(const SparseVoxelTensor<Scalar>& scene, const RowMatrix<Scalar>& w, int M,
                        int K, int stride, int extent) {
  std::vector<Coord4> coords;
  coords.reserve(scene.coords.size());
  for (const Coord3& c : scene.coords) coords.push_back({0, c.x, c.y, c.z});
  const KernelMap km = nn::build_kernel_map(coords, K, stride);
  const RowMatrix<Scalar> out = nn::conv_forward(scene.feats, w, Eigen::Index(K) * K * K, km);

  const Box3 bounds{{0, 0, 0}, {extent, extent, extent}};
  const auto dense = oracle::dense_conv3d_ref(voxel::to_dense(scene, bounds), w, K, stride);
  double gap = 0.0;
  for (std::size_t r = 0; r < km.out_coords.size(); ++r) {
    const Coord4& c = km.out_coords[r];
    for (int m = 0; m < M; ++m)
      gap = std::max(gap, std::abs(double(out(static_cast<Eigen::Index>(r), m)) -
                                   double(dense.at(m, c.z, c.x, c.y))));
  }
  return gap;
}

template <typename Scalar>
double deconv_dense_gap(const SparseVoxelTensor<Scalar>& scene, const RowMatrix<Scalar>& w, int M,
                        int K, int stride, int extent) {
  std::vector<Coord4> in_coords, targets;
  for (const Coord3& c : scene.coords) in_coords.push_back({0, c.x, c.y, c.z});
  // target: every stencil child of every input (the full reachable set)
  std::set<Coord4> t;
  for (const Coord4& c : in_coords)
    for (int kz = 0; kz < K; ++kz)
      for (int kx = 0; kx < K; ++kx)
        for (int ky = 0; ky < K; ++ky)
          t.insert({0, c.x * stride + kx, c.y * stride + ky, c.z * stride + kz});
  targets.assign(t.begin(), t.end());

  const KernelMap km = nn::build_deconv_map(in_coords, targets, K, stride);
  const RowMatrix<Scalar> out = nn::conv_forward(scene.feats, w, Eigen::Index(K) * K * K, km);

  const Box3 bounds{{0, 0, 0}, {extent, extent, extent}};
  const auto dense = oracle::dense_deconv_ref(voxel::to_dense(scene, bounds), w, K, stride);
  double gap = 0.0;
  for (std::size_t r = 0; r < km.out_coords.size(); ++r) {
    const Coord4& c = km.out_coords[r];
    for (int m = 0; m < M; ++m)
      gap = std::max(gap, std::abs(double(out(static_cast<Eigen::Index>(r), m)) -
                                   double(dense.at(m, c.z, c.x, c.y))));
  }
  return gap;
}

}  // namespace

TEST_CASE("kernel map: isolated voxel sees only itself") {
  const std::vector<Coord4> coords{{0, 3, 3, 3}};
  const KernelMap km = nn::build_kernel_map(coords, 3, 1);
  CHECK(km.out_coords == coords);
  int nonempty = 0;
  for (std::size_t t = 0; t < km.pairs.size(); ++t)
    if (!km.pairs[t].empty()) {
      ++nonempty;
      CHECK(t == 13);  // center offset (1,1,1) -> (1*3+1)*3+1
      CHECK(km.pairs[t].size() == 1);
    }
  CHECK(nonempty == 1);
}

TEST_CASE("kernel map: two adjacent voxels produce center and ±x pairs") {
  const std::vector<Coord4> coords{{0, 0, 0, 0}, {0, 1, 0, 0}};
  const KernelMap km = nn::build_kernel_map(coords, 3, 1);
  CHECK(km.out_coords == coords);
  std::size_t center = (1 * 3 + 1) * 3 + 1;  // (kz=1,kx=1,ky=1)
  std::size_t minus_x = (1 * 3 + 0) * 3 + 1;
  std::size_t plus_x = (1 * 3 + 2) * 3 + 1;
  int total_pairs = 0, nonempty = 0;
  for (std::size_t t = 0; t < km.pairs.size(); ++t) {
    total_pairs += static_cast<int>(km.pairs[t].size());
    if (!km.pairs[t].empty()) ++nonempty;
  }
  CHECK(km.pairs[center].size() == 2);
  CHECK(km.pairs[minus_x].size() == 1);
  CHECK(km.pairs[plus_x].size() == 1);
  CHECK(nonempty == 3);
  CHECK(total_pairs == 4);
}

TEST_CASE("kernel map: unsupported sizes and strides throw") {
  const std::vector<Coord4> coords{{0, 0, 0, 0}};
  CHECK_THROWS_AS((void)nn::build_kernel_map(coords, 4, 1), Unsupported);
  CHECK_THROWS_AS((void)nn::build_kernel_map(coords, 3, 3), Unsupported);
  CHECK_THROWS_AS((void)nn::build_kernel_map_2d(coords, 5, 1), Unsupported);
}

TEST_CASE("identity 1x1x1 conv and single-voxel center tap") {
  Rng rng(3);
  auto scene = testutil::random_scene<float>(6, 0.1, 4, rng);
  std::vector<Coord4> coords;
  for (const Coord3& c : scene.coords) coords.push_back({0, c.x, c.y, c.z});

  const KernelMap km1 = nn::build_kernel_map(coords, 1, 1);
  RowMatrix<float> eye = RowMatrix<float>::Identity(4, 4);
  CHECK(nn::conv_forward(scene.feats, eye, 1, km1) == scene.feats);

  const std::vector<Coord4> one{{0, 2, 2, 2}};
  RowMatrix<float> feat = testutil::random_matrix<float>(1, 4, rng);
  RowMatrix<float> w = testutil::random_matrix<float>(2, 4 * 27, rng);
  const KernelMap km3 = nn::build_kernel_map(one, 3, 1);
  const RowMatrix<float> out = nn::conv_forward(feat, w, 27, km3);
  for (int m = 0; m < 2; ++m) {
    float expect = 0.0f;
    for (int n = 0; n < 4; ++n) expect += w(m, n * 27 + 13) * feat(0, n);
    CHECK(out(0, m) == doctest::Approx(expect).epsilon(1e-5));
  }
}

TEST_CASE("sparse conv matches the dense oracle over K, stride, density") {
  Rng rng(77);
  for (int K : {2, 3})
    for (int stride : {1, 2})
      for (double density : {0.05, 0.2, 0.5}) {
        auto scene = testutil::random_scene<float>(16, density, 3, rng);
        auto w = testutil::random_matrix<float>(5, 3 * K * K * K, rng);
        const double gap = sparse_dense_gap(scene, w, 5, K, stride, 16);
        INFO("K=", K, " stride=", stride, " density=", density);
        CHECK(gap <= 1e-4);
      }
}

TEST_CASE("sparse deconv matches the dense transposed oracle") {
  Rng rng(78);
  for (int K : {2, 3})
    for (int stride : {1, 2})
      for (double density : {0.05, 0.2}) {
        auto scene = testutil::random_scene<float>(8, density, 3, rng);
        auto w = testutil::random_matrix<float>(4, 3 * K * K * K, rng);
        const double gap = deconv_dense_gap(scene, w, 4, K, stride, 8);
        INFO("K=", K, " stride=", stride, " density=", density);
        CHECK(gap <= 1e-4);
      }
}

TEST_CASE("deconv: single parent feeds each of its 8 children once") {
  const std::vector<Coord4> in{{0, 0, 0, 0}};
  std::vector<Coord4> targets;
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y)
      for (int z = 0; z < 2; ++z) targets.push_back({0, x, y, z});
  std::sort(targets.begin(), targets.end());
  const KernelMap km = nn::build_deconv_map(in, targets, 2, 2);
  CHECK(km.out_coords == targets);
  RowMatrix<float> feat(1, 1);
  feat << 2.5f;
  RowMatrix<float> ones = RowMatrix<float>::Ones(1, 8);
  const RowMatrix<float> out = nn::conv_forward(feat, ones, 8, km);
  for (Eigen::Index r = 0; r < out.rows(); ++r) CHECK(out(r, 0) == 2.5f);
}

TEST_CASE("deconv: unreachable target raises CoordinateError") {
  const std::vector<Coord4> in{{0, 0, 0, 0}};
  const std::vector<Coord4> targets{{0, 5, 5, 5}};
  CHECK_THROWS_AS((void)nn::build_deconv_map(in, targets, 2, 2), CoordinateError);
}

TEST_CASE("deconv round trips the encoder's coordinate set") {
  Rng rng(5);
  auto scene = testutil::random_scene<float>(8, 0.15, 2, rng);
  std::vector<Coord4> coords;
  for (const Coord3& c : scene.coords) coords.push_back({0, c.x, c.y, c.z});
  // encoder: stride-2 conv coordinates
  const KernelMap down = nn::build_kernel_map(coords, 2, 2);
  // decoder: deconv from the coarse set back onto the cached fine set
  const KernelMap up = nn::build_deconv_map(down.out_coords, coords, 2, 2);
  CHECK(up.out_coords == coords);
}

TEST_CASE("submanifold closure: stride-1 conv keeps the active set") {
  Rng rng(6);
  for (int K : {1, 2, 3}) {
    auto scene = testutil::random_scene<float>(10, 0.1, 1, rng);
    std::vector<Coord4> coords;
    for (const Coord3& c : scene.coords) coords.push_back({0, c.x, c.y, c.z});
    const KernelMap km = nn::build_kernel_map(coords, K, 1);
    CHECK(km.out_coords == coords);
  }
}

TEST_CASE("conv is linear in its input") {
  Rng rng(8);
  auto a = testutil::random_scene<float>(8, 0.2, 3, rng);
  auto b = a;
  rng.fill_uniform(b.feats, -1.0, 1.0);
  std::vector<Coord4> coords;
  for (const Coord3& c : a.coords) coords.push_back({0, c.x, c.y, c.z});
  const KernelMap km = nn::build_kernel_map(coords, 3, 1);
  auto w = testutil::random_matrix<float>(4, 3 * 27, rng);

  const float alpha = 0.7f, beta = -1.3f;
  const RowMatrix<float> lhs = nn::conv_forward<float>(alpha * a.feats + beta * b.feats, w, 27, km);
  const RowMatrix<float> rhs = alpha * nn::conv_forward(a.feats, w, 27, km) +
                               beta * nn::conv_forward(b.feats, w, 27, km);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-5f);
}

TEST_CASE("conv forward is deterministic across runs") {
  Rng rng(9);
  auto scene = testutil::random_scene<float>(12, 0.3, 8, rng);
  std::vector<Coord4> coords;
  for (const Coord3& c : scene.coords) coords.push_back({0, c.x, c.y, c.z});
  const KernelMap km = nn::build_kernel_map(coords, 3, 1);
  auto w = testutil::random_matrix<float>(8, 8 * 27, rng);
  const RowMatrix<float> a = nn::conv_forward(scene.feats, w, 27, km);
  const RowMatrix<float> b = nn::conv_forward(scene.feats, w, 27, km);
  CHECK(a == b);
}

TEST_CASE("conv rejects mismatched shapes") {
  const std::vector<Coord4> coords{{0, 0, 0, 0}};
  const KernelMap km = nn::build_kernel_map(coords, 3, 1);
  RowMatrix<float> x(1, 3);
  x.setOnes();
  RowMatrix<float> w_bad(2, 2 * 27);
  w_bad.setOnes();
  CHECK_THROWS_AS((void)nn::conv_forward(x, w_bad, 27, km), ShapeError);
}

TEST_CASE("planar conv on a dense image matches the 2D oracle") {
  Rng rng(10);
  const int H = 8, W = 8, K = 3;
  RowMatrix<float> img = testutil::random_matrix<float>(H, W, rng);
  const nn::Act<float> act = nn::compose_images<float>({img});
  auto w = testutil::random_matrix<float>(2, K * K, rng);

  for (int stride : {1, 2}) {
    const KernelMap km = nn::build_kernel_map_2d(act.coords, K, stride);
    const RowMatrix<float> out = nn::conv_forward(act.feats, w, K * K, km);

    Dense4<float> x(1, 1, H, W);
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) x.at(0, 0, i, j) = img(i, j);
    const auto ref = oracle::dense_conv2d_ref(x, w, K, stride);
    double gap = 0.0;
    for (std::size_t r = 0; r < km.out_coords.size(); ++r) {
      const Coord4& c = km.out_coords[r];
      for (int m = 0; m < 2; ++m)
        gap = std::max(gap, std::abs(double(out(static_cast<Eigen::Index>(r), m)) -
                                     double(ref.at(m, 0, c.x, c.y))));
    }
    INFO("stride=", stride);
    CHECK(gap <= 1e-5);
  }
}

TEST_CASE("batchnorm: eval identity, two-point standardization, batch statistics") {
  using V = RowVec<float>;
  V gamma = V::Ones(1), beta = V::Zero(1), mean = V::Zero(1), var = V::Ones(1);
  nn::BNSaved<float> saved;

  RowMatrix<float> x(3, 1);
  x << -2.0f, 0.5f, 7.0f;
  const RowMatrix<float> y =
      nn::bn_forward(x, gamma, beta, mean, var, 0.1f, 1e-5f, false, false, saved);
  CHECK((y - x).cwiseAbs().maxCoeff() <= 1e-4f);

  RowMatrix<float> two(2, 1);
  two << 1.0f, 3.0f;
  const RowMatrix<float> std2 =
      nn::bn_forward(two, gamma, beta, mean, var, 0.1f, 1e-5f, true, false, saved);
  CHECK(std2(0, 0) == doctest::Approx(-1.0f).epsilon(1e-4));
  CHECK(std2(1, 0) == doctest::Approx(1.0f).epsilon(1e-4));
  CHECK(mean(0) == 0.0f);  // stats_update=false left the buffers alone
  CHECK(var(0) == 1.0f);

  Rng rng(12);
  RowMatrix<float> batch = testutil::random_matrix<float>(64, 3, rng, -5.0, 5.0);
  V g3 = V::Ones(3), b3 = V::Zero(3), m3 = V::Zero(3), v3 = V::Ones(3);
  const RowMatrix<float> out =
      nn::bn_forward(batch, g3, b3, m3, v3, 0.1f, 1e-5f, true, true, saved);
  for (int c = 0; c < 3; ++c) {
    const float mu = out.col(c).mean();
    const float sig = (out.col(c).array() - mu).square().sum() / 64.0f;
    CHECK(std::abs(mu) <= 1e-5f);
    CHECK(std::abs(sig - 1.0f) <= 1e-3f);
  }
  CHECK(m3 != V::Zero(3));  // stats_update=true moved the buffers
  CHECK(v3 != V::Ones(3));

  RowMatrix<float> empty(0, 1);
  CHECK_THROWS_AS(
      (void)nn::bn_forward(empty, gamma, beta, mean, var, 0.1f, 1e-5f, true, true, saved),
      InvalidInput);
}

TEST_CASE("relu, pooling, and linear obey their closed forms") {
  RowMatrix<float> x(1, 3);
  x << -1.0f, 0.0f, 2.0f;
  RowMatrix<float> y = nn::relu_forward(x);
  CHECK(y(0, 0) == 0.0f);
  CHECK(y(0, 1) == 0.0f);
  CHECK(y(0, 2) == 2.0f);

  nn::Act<float> act;
  act.samples = 2;
  act.coords = {{0, 0, 0, 0}, {0, 1, 0, 0}, {1, 0, 0, 0}};
  act.feats.resize(3, 2);
  act.feats << 1.0f, 2.0f, 1.0f, 2.0f, 5.0f, -3.0f;
  const nn::Act<float> pooled = nn::global_avg_pool(act);
  REQUIRE(pooled.feats.rows() == 2);
  CHECK(pooled.feats(0, 0) == 1.0f);  // constant field -> that constant
  CHECK(pooled.feats(0, 1) == 2.0f);
  CHECK(pooled.feats(1, 0) == 5.0f);

  nn::Act<float> hollow;
  hollow.samples = 2;
  hollow.coords = {{0, 0, 0, 0}};
  hollow.feats.resize(1, 1);
  CHECK_THROWS_AS((void)nn::global_avg_pool(hollow), InvalidInput);

  RowMatrix<float> eye = RowMatrix<float>::Identity(3, 3);
  RowMatrix<float> none;
  CHECK(nn::linear_forward(x, eye, none) == x);
}

TEST_CASE("every primitive passes a finite-difference gradient check") {
  Rng rng(55);
  const double tol = 1e-6;

  const auto rel_gap = [](const RowMatrix<double>& analytic, const std::vector<double>& fd) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
      const double a = analytic.data()[i], n = fd[static_cast<std::size_t>(i)];
      worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}));
    }
    return worst;
  };

  SUBCASE("sparse conv (weights and input)") {
    auto scene = testutil::random_scene<double>(4, 0.15, 2, rng);
    std::vector<Coord4> coords;
    for (const Coord3& c : scene.coords) coords.push_back({0, c.x, c.y, c.z});
    const KernelMap km = nn::build_kernel_map(coords, 3, 1);
    auto w = testutil::random_matrix<double>(3, 2 * 27, rng);
    const auto g_up = testutil::random_matrix<double>(
        static_cast<Eigen::Index>(km.out_coords.size()), 3, rng);

    RowMatrix<double> g_in, g_w;
    nn::conv_backward(g_up, scene.feats, w, 27, km, g_in, g_w);

    std::vector<double> pw(w.data(), w.data() + w.size());
    auto fd_w = oracle::finite_diff(
        [&](const std::vector<double>& p) {
          RowMatrix<double> wt = Eigen::Map<const RowMatrix<double>>(p.data(), w.rows(), w.cols());
          return (nn::conv_forward(scene.feats, wt, 27, km).array() * g_up.array()).sum();
        },
        pw);
    CHECK(rel_gap(g_w, fd_w) <= tol);

    std::vector<double> px(scene.feats.data(), scene.feats.data() + scene.feats.size());
    auto fd_x = oracle::finite_diff(
        [&](const std::vector<double>& p) {
          RowMatrix<double> xt =
              Eigen::Map<const RowMatrix<double>>(p.data(), scene.feats.rows(), scene.feats.cols());
          return (nn::conv_forward(xt, w, 27, km).array() * g_up.array()).sum();
        },
        px);
    CHECK(rel_gap(g_in, fd_x) <= tol);
  }

  SUBCASE("deconv") {
    auto scene = testutil::random_scene<double>(3, 0.3, 2, rng);
    std::vector<Coord4> coords;
    for (const Coord3& c : scene.coords) coords.push_back({0, c.x, c.y, c.z});
    std::set<Coord4> t;
    for (const Coord4& c : coords)
      for (int kz = 0; kz < 2; ++kz)
        for (int kx = 0; kx < 2; ++kx)
          for (int ky = 0; ky < 2; ++ky) t.insert({0, c.x * 2 + kx, c.y * 2 + ky, c.z * 2 + kz});
    std::vector<Coord4> targets(t.begin(), t.end());
    const KernelMap km = nn::build_deconv_map(coords, targets, 2, 2);
    auto w = testutil::random_matrix<double>(2, 2 * 8, rng);
    const auto g_up = testutil::random_matrix<double>(
        static_cast<Eigen::Index>(km.out_coords.size()), 2, rng);

    RowMatrix<double> g_in, g_w;
    nn::conv_backward(g_up, scene.feats, w, 8, km, g_in, g_w);
    std::vector<double> pw(w.data(), w.data() + w.size());
    auto fd_w = oracle::finite_diff(
        [&](const std::vector<double>& p) {
          RowMatrix<double> wt = Eigen::Map<const RowMatrix<double>>(p.data(), w.rows(), w.cols());
          return (nn::conv_forward(scene.feats, wt, 8, km).array() * g_up.array()).sum();
        },
        pw);
    CHECK(rel_gap(g_w, fd_w) <= tol);
  }

  SUBCASE("batchnorm train and eval") {
    for (bool train : {true, false}) {
      RowMatrix<double> x = testutil::random_matrix<double>(6, 3, rng);
      RowVec<double> gamma = testutil::random_matrix<double>(1, 3, rng, 0.5, 1.5).row(0);
      RowVec<double> beta = testutil::random_matrix<double>(1, 3, rng).row(0);
      RowVec<double> mean = RowVec<double>::Zero(3), var = RowVec<double>::Ones(3);
      const auto g_up = testutil::random_matrix<double>(6, 3, rng);

      nn::BNSaved<double> saved;
      RowVec<double> m = mean, v = var;
      nn::bn_forward(x, gamma, beta, m, v, 0.1, 1e-5, train, false, saved);
      RowMatrix<double> g_in;
      RowVec<double> g_gamma, g_beta;
      nn::bn_backward(g_up, x, saved, gamma, g_in, g_gamma, g_beta);

      std::vector<double> px(x.data(), x.data() + x.size());
      auto fd_x = oracle::finite_diff(
          [&](const std::vector<double>& p) {
            RowMatrix<double> xt = Eigen::Map<const RowMatrix<double>>(p.data(), 6, 3);
            nn::BNSaved<double> s;
            RowVec<double> mm = mean, vv = var;
            return (nn::bn_forward(xt, gamma, beta, mm, vv, 0.1, 1e-5, train, false, s).array() *
                    g_up.array())
                .sum();
          },
          px);
      INFO("train=", train);
      CHECK(rel_gap(g_in, fd_x) <= tol);

      std::vector<double> pg(gamma.data(), gamma.data() + 3);
      auto fd_g = oracle::finite_diff(
          [&](const std::vector<double>& p) {
            RowVec<double> gt = Eigen::Map<const RowVec<double>>(p.data(), 3);
            nn::BNSaved<double> s;
            RowVec<double> mm = mean, vv = var;
            return (nn::bn_forward(x, gt, beta, mm, vv, 0.1, 1e-5, train, false, s).array() *
                    g_up.array())
                .sum();
          },
          pg);
      CHECK(rel_gap(g_gamma, fd_g) <= tol);
    }
  }

  SUBCASE("relu, pool, linear") {
    RowMatrix<double> x = testutil::random_matrix<double>(5, 4, rng);
    const auto g_up = testutil::random_matrix<double>(5, 4, rng);
    RowMatrix<double> g_relu = nn::relu_backward(g_up, x);
    std::vector<double> px(x.data(), x.data() + x.size());
    auto fd_r = oracle::finite_diff(
        [&](const std::vector<double>& p) {
          RowMatrix<double> xt = Eigen::Map<const RowMatrix<double>>(p.data(), 5, 4);
          return (nn::relu_forward(xt).array() * g_up.array()).sum();
        },
        px);
    CHECK(rel_gap(g_relu, fd_r) <= tol);

    nn::Act<double> act;
    act.samples = 2;
    act.coords = {{0, 0, 0, 0}, {0, 1, 0, 0}, {1, 0, 0, 0}, {1, 1, 1, 1}, {1, 2, 2, 2}};
    act.feats = testutil::random_matrix<double>(5, 4, rng);
    const auto g_pool = testutil::random_matrix<double>(2, 4, rng);
    RowMatrix<double> g_pin = nn::global_avg_pool_backward(g_pool, act);
    std::vector<double> pa(act.feats.data(), act.feats.data() + act.feats.size());
    auto fd_p = oracle::finite_diff(
        [&](const std::vector<double>& p) {
          nn::Act<double> a2 = act;
          a2.feats = Eigen::Map<const RowMatrix<double>>(p.data(), 5, 4);
          return (nn::global_avg_pool(a2).feats.array() * g_pool.array()).sum();
        },
        pa);
    CHECK(rel_gap(g_pin, fd_p) <= tol);

    RowMatrix<double> w = testutil::random_matrix<double>(3, 4, rng);
    RowMatrix<double> bias = testutil::random_matrix<double>(1, 3, rng);
    const auto g_lin = testutil::random_matrix<double>(5, 3, rng);
    RowMatrix<double> g_in, g_w, g_b;
    nn::linear_backward(g_lin, x, w, true, g_in, g_w, g_b);
    std::vector<double> pw(w.data(), w.data() + w.size());
    auto fd_w = oracle::finite_diff(
        [&](const std::vector<double>& p) {
          RowMatrix<double> wt = Eigen::Map<const RowMatrix<double>>(p.data(), 3, 4);
          return (nn::linear_forward(x, wt, bias).array() * g_lin.array()).sum();
        },
        pw);
    CHECK(rel_gap(g_w, fd_w) <= tol);
    // dL/dW = g^T x exactly, the closed form
    CHECK((g_w - g_lin.transpose() * x).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("compose keeps samples apart and concat/add validate sites") {
  SparseVoxelTensor<float> a, b;
  a.coords = {{0, 0, 0}};
  a.feats.resize(1, 2);
  a.feats << 1.0f, 2.0f;
  b.coords = {{1, 1, 1}};
  b.feats.resize(1, 2);
  b.feats << 3.0f, 4.0f;
  const nn::Act<float> batch = nn::compose<float>({a, b});
  REQUIRE(batch.rows() == 2);
  CHECK(batch.samples == 2);
  CHECK(batch.coords[0].s == 0);
  CHECK(batch.coords[1].s == 1);

  nn::Act<float> other = batch;
  other.coords[1].x = 9;
  CHECK_THROWS_AS((void)nn::add(batch, other), CoordinateError);
  const nn::Act<float> cat = nn::concat(batch, batch);
  CHECK(cat.channels() == 4);
}
