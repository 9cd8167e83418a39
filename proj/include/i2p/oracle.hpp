#pragma once

#include "i2p/types.hpp"

#include <cmath>
#include <functional>
#include <vector>

// Brute-force references used by tests: direct-summation convolutions on
// zero-filled dense grids, the projection-equivalence checker, and central
// finite differences. Deliberately naive and kept free of the production
// compute paths so the two implementations can only agree by being right.

namespace i2p::oracle {

/// Dense 3D cross-correlation, zero padding K div 2, output extent
/// ceil(extent/stride) per axis. Weights are [M x N*K^3] row-major with
/// column n*K^3 + (kz*K + kx)*K + ky.
template <typename Scalar>
Dense4<Scalar> dense_conv3d_ref(const Dense4<Scalar>& x, const RowMatrix<Scalar>& w, int K,
                                int stride) {
  const int N = x.C;
  const int M = static_cast<int>(w.rows());
  if (w.cols() != Eigen::Index(N) * K * K * K) throw ShapeError("conv3d ref: weight shape mismatch");
  const int pad = K / 2;
  const auto out_extent = [&](int e) { return (e + stride - 1) / stride; };
  Dense4<Scalar> out(M, out_extent(x.D), out_extent(x.H), out_extent(x.W),
                     {floor_div(x.origin.x, stride), floor_div(x.origin.y, stride),
                      floor_div(x.origin.z, stride)});
  for (int m = 0; m < M; ++m)
    for (int od = 0; od < out.D; ++od)
      for (int oh = 0; oh < out.H; ++oh)
        for (int ow = 0; ow < out.W; ++ow) {
          Scalar acc = 0;
          for (int n = 0; n < N; ++n)
            for (int kz = 0; kz < K; ++kz)
              for (int kx = 0; kx < K; ++kx)
                for (int ky = 0; ky < K; ++ky) {
                  const int id = od * stride + kz - pad;
                  const int ih = oh * stride + kx - pad;
                  const int iw = ow * stride + ky - pad;
                  if (id < 0 || id >= x.D || ih < 0 || ih >= x.H || iw < 0 || iw >= x.W) continue;
                  acc += w(m, (Eigen::Index(n) * K * K + Eigen::Index(kz) * K + kx) * K + ky) *
                         x.at(n, id, ih, iw);
                }
          out.at(m, od, oh, ow) = acc;
        }
  return out;
}

/// Dense 2D cross-correlation on a depth-1 grid; weights [M x N*K^2] with
/// column n*K^2 + kx*K + ky.
template <typename Scalar>
Dense4<Scalar> dense_conv2d_ref(const Dense4<Scalar>& x, const RowMatrix<Scalar>& w, int K,
                                int stride) {
  if (x.D != 1) throw ShapeError("conv2d ref: expected depth-1 grid");
  const int N = x.C;
  const int M = static_cast<int>(w.rows());
  if (w.cols() != Eigen::Index(N) * K * K) throw ShapeError("conv2d ref: weight shape mismatch");
  const int pad = K / 2;
  const auto out_extent = [&](int e) { return (e + stride - 1) / stride; };
  Dense4<Scalar> out(M, 1, out_extent(x.H), out_extent(x.W),
                     {floor_div(x.origin.x, stride), floor_div(x.origin.y, stride), x.origin.z});
  for (int m = 0; m < M; ++m)
    for (int oh = 0; oh < out.H; ++oh)
      for (int ow = 0; ow < out.W; ++ow) {
        Scalar acc = 0;
        for (int n = 0; n < N; ++n)
          for (int kx = 0; kx < K; ++kx)
            for (int ky = 0; ky < K; ++ky) {
              const int ih = oh * stride + kx - pad;
              const int iw = ow * stride + ky - pad;
              if (ih < 0 || ih >= x.H || iw < 0 || iw >= x.W) continue;
              acc += w(m, Eigen::Index(n) * K * K + Eigen::Index(kx) * K + ky) * x.at(n, 0, ih, iw);
            }
        out.at(m, 0, oh, ow) = acc;
      }
  return out;
}

/// Dense transposed 3D convolution, no padding: output cell o sums W[:, :, t]
/// times input i over all (i, t) with o = i*stride + t. Output extent
/// (extent-1)*stride + K.
template <typename Scalar>
Dense4<Scalar> dense_deconv_ref(const Dense4<Scalar>& x, const RowMatrix<Scalar>& w, int K,
                                int stride) {
  const int N = x.C;
  const int M = static_cast<int>(w.rows());
  if (w.cols() != Eigen::Index(N) * K * K * K) throw ShapeError("deconv ref: weight shape mismatch");
  Dense4<Scalar> out(M, (x.D - 1) * stride + K, (x.H - 1) * stride + K, (x.W - 1) * stride + K,
                     {x.origin.x * stride, x.origin.y * stride, x.origin.z * stride});
  for (int m = 0; m < M; ++m)
    for (int od = 0; od < out.D; ++od)
      for (int oh = 0; oh < out.H; ++oh)
        for (int ow = 0; ow < out.W; ++ow) {
          Scalar acc = 0;
          for (int n = 0; n < N; ++n)
            for (int kz = 0; kz < K; ++kz)
              for (int kx = 0; kx < K; ++kx)
                for (int ky = 0; ky < K; ++ky) {
                  const int rd = od - kz, rh = oh - kx, rw = ow - ky;
                  if (rd % stride || rh % stride || rw % stride) continue;
                  const int id = rd / stride, ih = rh / stride, iw = rw / stride;
                  if (id < 0 || id >= x.D || ih < 0 || ih >= x.H || iw < 0 || iw >= x.W) continue;
                  acc += w(m, (Eigen::Index(n) * K * K + Eigen::Index(kz) * K + kx) * K + ky) *
                         x.at(n, id, ih, iw);
                }
          out.at(m, od, oh, ow) = acc;
        }
  return out;
}

/// Max |conv3d(x, w3d) z-slice − conv2d(windowed z-sum, w2d)| over all output
/// cells, stride 1. With w3d built by z-replication of w2d the identity is
/// algebraically exact; other w3d measure how far it is violated.
template <typename Scalar>
Scalar projection_deviation(const Dense4<Scalar>& x, const RowMatrix<Scalar>& w3d,
                            const RowMatrix<Scalar>& w2d, int K) {
  const Dense4<Scalar> a = dense_conv3d_ref(x, w3d, K, 1);
  const int pad = K / 2;
  Scalar worst = 0;
  for (int z = 0; z < a.D; ++z) {
    Dense4<Scalar> zsum(x.C, 1, x.H, x.W, x.origin);
    for (int kz = 0; kz < K; ++kz) {
      const int id = z + kz - pad;
      if (id < 0 || id >= x.D) continue;
      for (int n = 0; n < x.C; ++n)
        for (int h = 0; h < x.H; ++h)
          for (int w_ = 0; w_ < x.W; ++w_) zsum.at(n, 0, h, w_) += x.at(n, id, h, w_);
    }
    const Dense4<Scalar> b = dense_conv2d_ref(zsum, w2d, K, 1);
    for (int m = 0; m < a.C; ++m)
      for (int h = 0; h < a.H; ++h)
        for (int w_ = 0; w_ < a.W; ++w_)
          worst = std::max(worst, std::abs(a.at(m, z, h, w_) - b.at(m, 0, h, w_)));
  }
  return worst;
}

/// projection_deviation with w3d built by replicating w2d along z (the default
/// inflation), constructed inline so this check stays self-contained.
template <typename Scalar>
Scalar projection_equivalence_check(const RowMatrix<Scalar>& w2d, int N, int K,
                                    const Dense4<Scalar>& x) {
  const Eigen::Index M = w2d.rows();
  if (w2d.cols() != Eigen::Index(N) * K * K) throw ShapeError("projection check: bad 2D weight");
  RowMatrix<Scalar> w3d(M, Eigen::Index(N) * K * K * K);
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index n = 0; n < N; ++n)
      for (int kz = 0; kz < K; ++kz)
        for (int i = 0; i < K * K; ++i)
          w3d(m, n * K * K * K + Eigen::Index(kz) * K * K + i) = w2d(m, n * K * K + i);
  return projection_deviation(x, w3d, w2d, K);
}

/// Central finite differences of a scalar function, step h per coordinate.
inline std::vector<double> finite_diff(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> p,
    double h = 1e-5) {
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double fp = f(p);
    p[i] = keep - h;
    const double fm = f(p);
    p[i] = keep;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite differences: non-finite function value");
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace i2p::oracle
