#pragma once

#include "i2p/kernel_map.hpp"
#include "i2p/types.hpp"
#include "i2p/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

namespace i2p::nn {

/// One activation flowing through a network. Rows carry features; `coords`
/// locates each row on the voxel grid (sample id + xyz). After global pooling
/// `coords` is empty and row r belongs to sample r ("vector mode"). Dense 2D
/// images ride the same representation as a fully active z=0 plane.
template <typename Scalar>
struct Act {
  RowMatrix<Scalar> feats;
  std::vector<Coord4> coords;
  int samples = 1;
  int stride_level = 0;

  Eigen::Index rows() const { return feats.rows(); }
  Eigen::Index channels() const { return feats.cols(); }
  bool vector_mode() const { return coords.empty(); }
};

/// Named parameter tensor. `value` holds the row-major flattening
/// [dims[0] x prod(dims[1:])], which is also the archive payload order;
/// 1-D tensors are kept as a single row so channel vectors broadcast cleanly.
template <typename Scalar>
struct Param {
  std::string name;
  std::vector<std::int64_t> dims;
  RowMatrix<Scalar> value;
  bool trainable = true;

  std::int64_t numel() const { return value.size(); }
};

template <typename Scalar>
class ParamStore {
 public:
  Param<Scalar>& add(std::string name, std::vector<std::int64_t> dims, bool trainable = true) {
    if (index_.count(name)) throw StateError("parameter '" + name + "' already exists");
    std::int64_t lead = dims.at(0), rest = 1;
    for (std::size_t i = 1; i < dims.size(); ++i) rest *= dims[i];
    if (dims.size() == 1) std::swap(lead, rest);
    Param<Scalar> p;
    p.name = std::move(name);
    p.dims = std::move(dims);
    p.value = RowMatrix<Scalar>::Zero(lead, rest);
    p.trainable = trainable;
    index_.emplace(p.name, params_.size());
    params_.push_back(std::move(p));
    grads_.emplace_back();
    return params_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Param<Scalar>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("unknown parameter '" + name + "'");
    return params_[it->second];
  }
  const Param<Scalar>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("unknown parameter '" + name + "'");
    return params_[it->second];
  }

  /// Gradient accumulator, lazily zero-sized until first touched.
  RowMatrix<Scalar>& grad(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("unknown parameter '" + name + "'");
    RowMatrix<Scalar>& g = grads_[it->second];
    const Param<Scalar>& p = params_[it->second];
    if (g.rows() != p.value.rows() || g.cols() != p.value.cols())
      g = RowMatrix<Scalar>::Zero(p.value.rows(), p.value.cols());
    return g;
  }

  void zero_grads() {
    for (std::size_t i = 0; i < grads_.size(); ++i)
      if (grads_[i].size() > 0) grads_[i].setZero();
  }

  std::size_t size() const { return params_.size(); }
  Param<Scalar>& operator[](std::size_t i) { return params_[i]; }
  const Param<Scalar>& operator[](std::size_t i) const { return params_[i]; }
  RowMatrix<Scalar>& grad_by_index(std::size_t i) { return grad(params_[i].name); }

 private:
  std::vector<Param<Scalar>> params_;
  std::vector<RowMatrix<Scalar>> grads_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Convolution via kernel map: gather input rows per offset, multiply by that
// offset's weight slice, scatter-add into output rows. Offsets run in index
// order and pair lists are ordered, so accumulation order is deterministic.
// ---------------------------------------------------------------------------

namespace detail {

template <typename Scalar>
using OffsetView =
    Eigen::Map<const RowMatrix<Scalar>, Eigen::Unaligned, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;

/// View of kernel offset t inside weight [M x N*T] as an M x N matrix.
template <typename Scalar>
OffsetView<Scalar> offset_view(const RowMatrix<Scalar>& w, Eigen::Index N, Eigen::Index T,
                               Eigen::Index t) {
  return OffsetView<Scalar>(w.data() + t, w.rows(), N,
                            Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(N * T, T));
}

}  // namespace detail

/// Sparse convolution forward. `w` is [M x N*T] with T = number of kernel
/// offsets (K^3, or K^2 for planar convolution); column n*T + t holds
/// W[m][n][offset t]. Returns features [n_out x M].
template <typename Scalar>
RowMatrix<Scalar> conv_forward(const RowMatrix<Scalar>& x, const RowMatrix<Scalar>& w,
                               Eigen::Index n_offsets, const KernelMap& km) {
  const Eigen::Index M = w.rows();
  const Eigen::Index N = x.cols();
  if (w.cols() != N * n_offsets) throw ShapeError("conv: weight/channel mismatch");
  if (km.n_in != x.rows()) throw ShapeError("conv: kernel map built for different input");

  RowMatrix<Scalar> out = RowMatrix<Scalar>::Zero(static_cast<Eigen::Index>(km.out_coords.size()), M);
  RowMatrix<Scalar> gathered, partial;
  for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(km.pairs.size()); ++t) {
    const auto& pairs = km.pairs[static_cast<std::size_t>(t)];
    if (pairs.empty()) continue;
    gathered.resize(static_cast<Eigen::Index>(pairs.size()), N);
    for (std::size_t k = 0; k < pairs.size(); ++k) gathered.row(static_cast<Eigen::Index>(k)) = x.row(pairs[k].first);
    partial.noalias() = gathered * detail::offset_view(w, N, n_offsets, t).transpose();
    for (std::size_t k = 0; k < pairs.size(); ++k)
      out.row(pairs[k].second) += partial.row(static_cast<Eigen::Index>(k));
  }
  return out;
}

/// Gradients of conv_forward: d(loss)/d(input) and d(loss)/d(weight).
template <typename Scalar>
void conv_backward(const RowMatrix<Scalar>& g_out, const RowMatrix<Scalar>& x,
                   const RowMatrix<Scalar>& w, Eigen::Index n_offsets, const KernelMap& km,
                   RowMatrix<Scalar>& g_in, RowMatrix<Scalar>& g_w) {
  const Eigen::Index M = w.rows();
  const Eigen::Index N = x.cols();
  g_in = RowMatrix<Scalar>::Zero(x.rows(), N);
  g_w = RowMatrix<Scalar>::Zero(w.rows(), w.cols());

  RowMatrix<Scalar> gx, gg, partial;
  for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(km.pairs.size()); ++t) {
    const auto& pairs = km.pairs[static_cast<std::size_t>(t)];
    if (pairs.empty()) continue;
    const Eigen::Index p = static_cast<Eigen::Index>(pairs.size());
    gx.resize(p, N);
    gg.resize(p, M);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      gx.row(static_cast<Eigen::Index>(k)) = x.row(pairs[k].first);
      gg.row(static_cast<Eigen::Index>(k)) = g_out.row(pairs[k].second);
    }
    // weight slice gradient: sum over pairs of g_out^T x
    Eigen::Map<RowMatrix<Scalar>, Eigen::Unaligned, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>
        gw_t(g_w.data() + t, M, N, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(N * n_offsets, n_offsets));
    gw_t.noalias() += gg.transpose() * gx;
    // input gradient: push g_out through the same weight slice
    partial.noalias() = gg * detail::offset_view(w, N, n_offsets, t);
    for (std::size_t k = 0; k < pairs.size(); ++k)
      g_in.row(pairs[k].first) += partial.row(static_cast<Eigen::Index>(k));
  }
}

/// Kernel map for planar (2D) convolution on the z=0 plane: K^2 offsets over
/// (x, y), index t = kx*K + ky, padding K div 2, z copied through. Used by the
/// dense-image path, where coords enumerate every pixel.
inline KernelMap build_kernel_map_2d(const std::vector<Coord4>& in_coords, int K, int stride) {
  if (K < 1 || K > 3 || (stride != 1 && stride != 2))
    throw Unsupported("planar kernel map: unsupported K=" + std::to_string(K) +
                      " stride=" + std::to_string(stride));
  KernelMap km;
  km.K = K;
  km.stride = stride;
  km.n_in = static_cast<std::int64_t>(in_coords.size());
  km.pairs.resize(static_cast<std::size_t>(K * K));

  if (stride == 1) {
    km.out_coords = in_coords;
  } else {
    km.out_coords.reserve(in_coords.size());
    for (const Coord4& c : in_coords)
      km.out_coords.push_back({c.s, floor_div(c.x, stride), floor_div(c.y, stride), c.z});
    std::sort(km.out_coords.begin(), km.out_coords.end());
    km.out_coords.erase(std::unique(km.out_coords.begin(), km.out_coords.end()),
                        km.out_coords.end());
  }

  std::unordered_map<Coord4, std::int32_t, Coord4Hash> rows;
  rows.reserve(in_coords.size() * 2);
  for (std::size_t i = 0; i < in_coords.size(); ++i)
    rows.emplace(in_coords[i], static_cast<std::int32_t>(i));

  const std::int32_t pad = K / 2;
  for (std::size_t o = 0; o < km.out_coords.size(); ++o) {
    const Coord4& oc = km.out_coords[o];
    for (int kx = 0; kx < K; ++kx)
      for (int ky = 0; ky < K; ++ky) {
        const Coord4 ic{oc.s, oc.x * stride + kx - pad, oc.y * stride + ky - pad, oc.z};
        const auto it = rows.find(ic);
        if (it == rows.end()) continue;
        km.pairs[static_cast<std::size_t>(kx * K + ky)].emplace_back(
            it->second, static_cast<std::int32_t>(o));
      }
  }
  return km;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <typename Scalar>
struct BNSaved {
  RowVec<Scalar> mean;    // statistics used for normalization
  RowVec<Scalar> invstd;
  bool train = false;
};

/// Normalize feature rows. Train mode uses batch statistics (biased variance)
/// and, iff stats_update, folds them into the running buffers with exponential
/// momentum; Eval mode normalizes by the running buffers.
template <typename Scalar>
RowMatrix<Scalar> bn_forward(const RowMatrix<Scalar>& x, const RowVec<Scalar>& gamma,
                             const RowVec<Scalar>& beta, RowVec<Scalar>& running_mean,
                             RowVec<Scalar>& running_var, Scalar momentum, Scalar eps, bool train,
                             bool stats_update, BNSaved<Scalar>& saved) {
  if (x.cols() != gamma.cols() || x.cols() != beta.cols() || x.cols() != running_mean.cols() ||
      x.cols() != running_var.cols())
    throw ShapeError("batchnorm: channel width mismatch");
  saved.train = train;
  if (train) {
    if (x.rows() == 0) throw InvalidInput("batchnorm: empty batch in train mode");
    const Scalar n = static_cast<Scalar>(x.rows());
    saved.mean = x.colwise().sum() / n;
    RowVec<Scalar> var =
        (x.rowwise() - saved.mean).array().square().colwise().sum().matrix() / n;
    saved.invstd = (var.array() + eps).rsqrt();
    if (stats_update) {
      running_mean = (Scalar(1) - momentum) * running_mean + momentum * saved.mean;
      running_var = (Scalar(1) - momentum) * running_var + momentum * var;
    }
  } else {
    saved.mean = running_mean;
    saved.invstd = (running_var.array() + eps).rsqrt();
  }
  RowMatrix<Scalar> y = ((x.rowwise() - saved.mean).array().rowwise() *
                         (saved.invstd.array() * gamma.array()))
                            .matrix();
  y.rowwise() += beta;
  return y;
}

template <typename Scalar>
void bn_backward(const RowMatrix<Scalar>& g, const RowMatrix<Scalar>& x,
                 const BNSaved<Scalar>& saved, const RowVec<Scalar>& gamma,
                 RowMatrix<Scalar>& g_in, RowVec<Scalar>& g_gamma, RowVec<Scalar>& g_beta) {
  RowMatrix<Scalar> xhat = (x.rowwise() - saved.mean).array().rowwise() * saved.invstd.array();
  g_beta = g.colwise().sum();
  g_gamma = (g.array() * xhat.array()).colwise().sum();
  if (saved.train) {
    const Scalar n = static_cast<Scalar>(x.rows());
    // d/dx through the batch statistics: remove the batch-mean components,
    // then rescale like the forward pass
    g_in = ((g.rowwise() - g_beta / n).array() - xhat.array().rowwise() * (g_gamma / n).array())
               .matrix();
    g_in = (g_in.array().rowwise() * (saved.invstd.array() * gamma.array())).matrix();
  } else {
    g_in = (g.array().rowwise() * (saved.invstd.array() * gamma.array())).matrix();
  }
}

// ---------------------------------------------------------------------------
// Pointwise and dense layers
// ---------------------------------------------------------------------------

template <typename Scalar>
RowMatrix<Scalar> relu_forward(const RowMatrix<Scalar>& x) {
  return x.cwiseMax(Scalar(0));
}

template <typename Scalar>
RowMatrix<Scalar> relu_backward(const RowMatrix<Scalar>& g, const RowMatrix<Scalar>& x) {
  return (x.array() > Scalar(0)).select(g, RowMatrix<Scalar>::Zero(g.rows(), g.cols()));
}

/// y = x W^T (+ bias). `w` is [out x in]; bias may be empty.
template <typename Scalar>
RowMatrix<Scalar> linear_forward(const RowMatrix<Scalar>& x, const RowMatrix<Scalar>& w,
                                 const RowMatrix<Scalar>& bias) {
  if (x.cols() != w.cols()) throw ShapeError("linear: input width mismatch");
  RowMatrix<Scalar> y = x * w.transpose();
  if (bias.size() > 0) y.rowwise() += bias.row(0);
  return y;
}

template <typename Scalar>
void linear_backward(const RowMatrix<Scalar>& g, const RowMatrix<Scalar>& x,
                     const RowMatrix<Scalar>& w, bool has_bias, RowMatrix<Scalar>& g_in,
                     RowMatrix<Scalar>& g_w, RowMatrix<Scalar>& g_bias) {
  g_w.noalias() = g.transpose() * x;
  if (has_bias) g_bias = g.colwise().sum();
  g_in.noalias() = g * w;
}

/// Average features over each sample's active rows; output is vector-mode
/// with one row per sample.
template <typename Scalar>
Act<Scalar> global_avg_pool(const Act<Scalar>& x) {
  if (x.vector_mode()) throw ShapeError("pool: input already pooled");
  Act<Scalar> out;
  out.samples = x.samples;
  out.stride_level = x.stride_level;
  out.feats = RowMatrix<Scalar>::Zero(x.samples, x.channels());
  std::vector<Scalar> count(static_cast<std::size_t>(x.samples), Scalar(0));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const std::int32_t s = x.coords[static_cast<std::size_t>(r)].s;
    out.feats.row(s) += x.feats.row(r);
    count[static_cast<std::size_t>(s)] += Scalar(1);
  }
  for (int s = 0; s < x.samples; ++s) {
    if (count[static_cast<std::size_t>(s)] == Scalar(0))
      throw InvalidInput("pool: sample with empty active set");
    out.feats.row(s) /= count[static_cast<std::size_t>(s)];
  }
  return out;
}

template <typename Scalar>
RowMatrix<Scalar> global_avg_pool_backward(const RowMatrix<Scalar>& g, const Act<Scalar>& x) {
  std::vector<Scalar> count(static_cast<std::size_t>(x.samples), Scalar(0));
  for (const Coord4& c : x.coords) count[static_cast<std::size_t>(c.s)] += Scalar(1);
  RowMatrix<Scalar> g_in(x.rows(), x.channels());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const std::int32_t s = x.coords[static_cast<std::size_t>(r)].s;
    g_in.row(r) = g.row(s) / count[static_cast<std::size_t>(s)];
  }
  return g_in;
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

template <typename Scalar>
void require_same_sites(const Act<Scalar>& a, const Act<Scalar>& b, const char* op) {
  if (a.coords != b.coords)
    throw CoordinateError(std::string(op) + ": operands live on different active sets");
}

template <typename Scalar>
Act<Scalar> add(const Act<Scalar>& a, const Act<Scalar>& b) {
  require_same_sites(a, b, "add");
  if (a.channels() != b.channels()) throw ShapeError("add: channel mismatch");
  Act<Scalar> out = a;
  out.feats += b.feats;
  return out;
}

template <typename Scalar>
Act<Scalar> concat(const Act<Scalar>& a, const Act<Scalar>& b) {
  require_same_sites(a, b, "concat");
  Act<Scalar> out;
  out.coords = a.coords;
  out.samples = a.samples;
  out.stride_level = a.stride_level;
  out.feats.resize(a.rows(), a.channels() + b.channels());
  out.feats.leftCols(a.channels()) = a.feats;
  out.feats.rightCols(b.channels()) = b.feats;
  return out;
}

// ---------------------------------------------------------------------------
// Batch composition
// ---------------------------------------------------------------------------

/// Stack per-sample sparse tensors into one batch activation; row order is
/// sample-major and therefore sorted by (sample, x, y, z).
template <typename Scalar>
Act<Scalar> compose(const std::vector<voxel::SparseVoxelTensor<Scalar>>& batch) {
  if (batch.empty()) throw InvalidInput("compose: empty batch");
  Eigen::Index rows = 0;
  const Eigen::Index ch = batch.front().channels();
  for (const auto& t : batch) {
    if (t.channels() != ch) throw ShapeError("compose: channel mismatch across samples");
    rows += t.size();
  }
  Act<Scalar> out;
  out.samples = static_cast<int>(batch.size());
  out.stride_level = batch.front().stride_level;
  out.feats.resize(rows, ch);
  out.coords.reserve(static_cast<std::size_t>(rows));
  Eigen::Index at = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& t = batch[s];
    for (std::size_t i = 0; i < t.coords.size(); ++i)
      out.coords.push_back({static_cast<std::int32_t>(s), t.coords[i].x, t.coords[i].y, t.coords[i].z});
    out.feats.middleRows(at, t.size()) = t.feats;
    at += t.size();
  }
  return out;
}

/// Stack dense [H x W] single-channel images as a fully active z=0 plane.
template <typename Scalar>
Act<Scalar> compose_images(const std::vector<RowMatrix<Scalar>>& batch) {
  if (batch.empty()) throw InvalidInput("compose: empty batch");
  const Eigen::Index H = batch.front().rows();
  const Eigen::Index W = batch.front().cols();
  Act<Scalar> out;
  out.samples = static_cast<int>(batch.size());
  out.feats.resize(static_cast<Eigen::Index>(batch.size()) * H * W, 1);
  out.coords.reserve(static_cast<std::size_t>(out.feats.rows()));
  Eigen::Index r = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    if (batch[s].rows() != H || batch[s].cols() != W)
      throw ShapeError("compose: image size mismatch across batch");
    for (Eigen::Index x = 0; x < H; ++x)
      for (Eigen::Index y = 0; y < W; ++y) {
        out.coords.push_back({static_cast<std::int32_t>(s), static_cast<std::int32_t>(x),
                              static_cast<std::int32_t>(y), 0});
        out.feats(r++, 0) = batch[s](x, y);
      }
  }
  return out;
}

}  // namespace i2p::nn
