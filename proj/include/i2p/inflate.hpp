#pragma once

#include "i2p/io.hpp"
#include "i2p/rng.hpp"
#include "i2p/types.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace i2p::inflate {

enum class TransformKind { Default, T1, T2, T3, Learned };
enum class Sharing { Shared, PerFilter };
enum class TInit { FromDefault, Random };

/// A K^2 x K^3 matrix mapping a flattened 2D kernel slice (kx*K + ky) to a
/// flattened 3D kernel (kz*K^2 + kx*K + ky).
struct FilterTransform {
  RowMatrix<float> matrix;
  TransformKind kind = TransformKind::Default;
  int K = 0;
  bool trainable = false;
};

/// Handcrafted transform matrices. Default replicates the 2D slice along z;
/// T1 repeats it along x (the 2D slice occupies the (z, y) plane); T2 along y;
/// T3 shifts the slice cyclically by (d, d) inside each z=d plane so its
/// anchor walks the main space diagonal.
template <typename Scalar>
RowMatrix<Scalar> transform_matrix(TransformKind kind, int K) {
  if (K < 1) throw InvalidInput("transform: K must be positive");
  const Eigen::Index K2 = Eigen::Index(K) * K;
  const Eigen::Index K3 = K2 * K;
  RowMatrix<Scalar> t = RowMatrix<Scalar>::Zero(K2, K3);
  for (int kz = 0; kz < K; ++kz)
    for (int kx = 0; kx < K; ++kx)
      for (int ky = 0; ky < K; ++ky) {
        const Eigen::Index col = Eigen::Index(kz) * K2 + Eigen::Index(kx) * K + ky;
        Eigen::Index row = 0;
        switch (kind) {
          case TransformKind::Default:
            row = Eigen::Index(kx) * K + ky;
            break;
          case TransformKind::T1:
            row = Eigen::Index(kz) * K + ky;
            break;
          case TransformKind::T2:
            row = Eigen::Index(kz) * K + kx;
            break;
          case TransformKind::T3:
            row = Eigen::Index((kx - kz + K) % K) * K + (ky - kz + K) % K;
            break;
          case TransformKind::Learned:
            throw InvalidInput("transform: learned kind has no fixed matrix");
        }
        t(row, col) = Scalar(1);
      }
  return t;
}

inline FilterTransform default_transform(int K) {
  return {transform_matrix<float>(TransformKind::Default, K), TransformKind::Default, K, false};
}

inline FilterTransform handcrafted_transform(TransformKind kind, int K) {
  if (kind != TransformKind::T1 && kind != TransformKind::T2 && kind != TransformKind::T3)
    throw InvalidInput("handcrafted transform: kind must be T1, T2, or T3");
  return {transform_matrix<float>(kind, K), kind, K, false};
}

/// Learnable-transform starting point: the default matrix, or symmetric
/// uniform entries scaled by the K^2/K^3 fan rule.
inline FilterTransform init_transform(TInit mode, int K, std::uint64_t seed) {
  FilterTransform t;
  t.kind = TransformKind::Learned;
  t.K = K;
  t.trainable = true;
  if (mode == TInit::FromDefault) {
    t.matrix = transform_matrix<float>(TransformKind::Default, K);
  } else {
    const double a = std::sqrt(6.0 / (double(K) * K + double(K) * K * K));
    t.matrix.resize(Eigen::Index(K) * K, Eigen::Index(K) * K * K);
    Rng rng(seed);
    rng.fill_uniform(t.matrix, -a, a);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Applying transforms to weights. 2D weights are [M x N*K^2] row-major, which
// is also [(M*N) x K^2] contiguous, so the whole inflation is one product.
// ---------------------------------------------------------------------------

template <typename Scalar>
RowMatrix<Scalar> apply_transform(const RowMatrix<Scalar>& w2d, Eigen::Index N, int K,
                                  const RowMatrix<Scalar>& t) {
  const Eigen::Index K2 = Eigen::Index(K) * K;
  const Eigen::Index K3 = K2 * K;
  if (w2d.cols() != N * K2) throw ShapeError("apply transform: weight width mismatch");
  if (t.rows() != K2 || t.cols() != K3) throw ShapeError("apply transform: matrix is not K^2 x K^3");
  const Eigen::Index M = w2d.rows();
  Eigen::Map<const RowMatrix<Scalar>> v(w2d.data(), M * N, K2);
  RowMatrix<Scalar> flat(M * N, K3);
  flat.noalias() = v * t;
  return Eigen::Map<const RowMatrix<Scalar>>(flat.data(), M, N * K3);
}

/// Per-filter variant: one matrix per (m, n), ordered m*N + n.
template <typename Scalar>
RowMatrix<Scalar> apply_transform_per_filter(const RowMatrix<Scalar>& w2d, Eigen::Index N, int K,
                                             const std::vector<RowMatrix<Scalar>>& ts) {
  const Eigen::Index K2 = Eigen::Index(K) * K;
  const Eigen::Index K3 = K2 * K;
  if (w2d.cols() != N * K2) throw ShapeError("apply transform: weight width mismatch");
  const Eigen::Index M = w2d.rows();
  if (static_cast<Eigen::Index>(ts.size()) != M * N)
    throw ShapeError("apply transform: need one matrix per filter");
  Eigen::Map<const RowMatrix<Scalar>> v(w2d.data(), M * N, K2);
  RowMatrix<Scalar> flat(M * N, K3);
  for (Eigen::Index f = 0; f < M * N; ++f) {
    const RowMatrix<Scalar>& t = ts[static_cast<std::size_t>(f)];
    if (t.rows() != K2 || t.cols() != K3)
      throw ShapeError("apply transform: matrix is not K^2 x K^3");
    flat.row(f).noalias() = v.row(f) * t;
  }
  return Eigen::Map<const RowMatrix<Scalar>>(flat.data(), M, N * K3);
}

// ---------------------------------------------------------------------------
// Gradients through the transform. g_w3d arrives as [M x N*K^3] (the conv
// weight gradient); v is the frozen 2D weight.
// ---------------------------------------------------------------------------

/// dL/dT for a transform shared across filters: sum over filters of v^T g.
/// Accumulates into g_t so multiple layers sharing one T add up.
template <typename Scalar>
void add_transform_gradient_shared(const RowMatrix<Scalar>& g_w3d, const RowMatrix<Scalar>& w2d,
                                   Eigen::Index N, int K, RowMatrix<Scalar>& g_t) {
  const Eigen::Index K2 = Eigen::Index(K) * K;
  const Eigen::Index K3 = K2 * K;
  const Eigen::Index M = w2d.rows();
  Eigen::Map<const RowMatrix<Scalar>> v(w2d.data(), M * N, K2);
  Eigen::Map<const RowMatrix<Scalar>> g(g_w3d.data(), M * N, K3);
  g_t.noalias() += v.transpose() * g;
}

/// dL/dT per filter: row f of the flattened weight feeds only T_f.
template <typename Scalar>
void add_transform_gradient_per_filter(const RowMatrix<Scalar>& g_w3d,
                                       const RowMatrix<Scalar>& w2d, Eigen::Index N, int K,
                                       std::vector<RowMatrix<Scalar>*>& g_ts) {
  const Eigen::Index K2 = Eigen::Index(K) * K;
  const Eigen::Index K3 = K2 * K;
  const Eigen::Index M = w2d.rows();
  if (static_cast<Eigen::Index>(g_ts.size()) != M * N)
    throw ShapeError("transform gradient: need one accumulator per filter");
  Eigen::Map<const RowMatrix<Scalar>> v(w2d.data(), M * N, K2);
  Eigen::Map<const RowMatrix<Scalar>> g(g_w3d.data(), M * N, K3);
  for (Eigen::Index f = 0; f < M * N; ++f)
    g_ts[static_cast<std::size_t>(f)]->noalias() += v.row(f).transpose() * g.row(f);
}

/// dL/d(2D weight) when the 2D weights are themselves trainable: g W3 . T^T.
template <typename Scalar>
RowMatrix<Scalar> weight2d_gradient(const RowMatrix<Scalar>& g_w3d, Eigen::Index N, int K,
                                    const RowMatrix<Scalar>& t) {
  const Eigen::Index K2 = Eigen::Index(K) * K;
  const Eigen::Index K3 = K2 * K;
  const Eigen::Index M = g_w3d.rows();
  Eigen::Map<const RowMatrix<Scalar>> g(g_w3d.data(), M * N, K3);
  RowMatrix<Scalar> flat(M * N, K2);
  flat.noalias() = g * t.transpose();
  return Eigen::Map<const RowMatrix<Scalar>>(flat.data(), M, N * K2);
}

// ---------------------------------------------------------------------------
// Whole-archive inflation
// ---------------------------------------------------------------------------

/// Per-layer transform assignment. A layer resolves to its override if
/// present, else to the default kind; no override and no default is a
/// PolicyError.
struct InflatePolicy {
  std::optional<TransformKind> default_kind = TransformKind::Default;
  std::map<std::string, TransformKind> overrides;
  Sharing sharing = Sharing::Shared;
  const io::WeightArchive* learned_source = nullptr;  // t.* records for Learned

  TransformKind kind_for(const std::string& conv_name) const {
    const auto it = overrides.find(conv_name);
    if (it != overrides.end()) return it->second;
    if (default_kind) return *default_kind;
    throw PolicyError("inflation policy: no transform assigned to '" + conv_name + "'");
  }
};

/// Convert a 2D-source archive into the 3D archive a target network loads its
/// backbone from. Conv weights [M,N,K,K] with K in {1,3} are transformed per
/// policy (Learned keeps them 2D and bundles the t.* tensors instead); BN
/// tensors are copied verbatim; anything else in the source (stems, heads,
/// 7x7 convs) is dropped because the 3D network re-initializes its own input
/// and output layers.
inline io::WeightArchive inflate_network(const io::WeightArchive& src,
                                         const InflatePolicy& policy,
                                         const std::vector<std::string>& backbone_convs,
                                         const std::vector<std::string>& backbone_bns) {
  if (src.tag != io::WeightArchive::kTag2D)
    throw InvalidInput("inflate: source archive is not tagged as a 2D network");
  io::WeightArchive out;
  out.tag = io::WeightArchive::kTag3D;

  for (const std::string& name : backbone_convs) {
    const io::TensorRecord* rec = src.find(name);
    if (!rec) throw ArchiveError("inflate: source archive is missing '" + name + "'");
    if (rec->dims.size() != 4 || rec->dims[2] != rec->dims[3])
      throw ShapeError("inflate: '" + name + "' is not a square 2D conv weight");
    const int K = static_cast<int>(rec->dims[2]);
    if (K != 1 && K != 3)
      throw Unsupported("inflate: unsupported kernel size " + std::to_string(K) + " in '" + name +
                        "'");
    const TransformKind kind = policy.kind_for(name);
    const Eigen::Index M = static_cast<Eigen::Index>(rec->dims[0]);
    const Eigen::Index N = static_cast<Eigen::Index>(rec->dims[1]);
    if (kind == TransformKind::Learned) {
      out.add(name, rec->dims, rec->values);  // weights stay 2D; T carries the lift
      continue;
    }
    Eigen::Map<const RowMatrix<float>> w2d(rec->values.data(), M,
                                           N * Eigen::Index(K) * Eigen::Index(K));
    const RowMatrix<float> w3d = apply_transform(RowMatrix<float>(w2d), N, K,
                                                 transform_matrix<float>(kind, K));
    std::vector<float> payload(w3d.data(), w3d.data() + w3d.size());
    out.add(name, {rec->dims[0], rec->dims[1], rec->dims[2], rec->dims[2], rec->dims[2]},
            std::move(payload));
  }

  for (const std::string& name : backbone_bns) {
    const io::TensorRecord* rec = src.find(name);
    if (!rec) throw ArchiveError("inflate: source archive is missing '" + name + "'");
    out.add(rec->name, rec->dims, rec->values);
  }

  if (policy.learned_source) {
    for (const io::TensorRecord& rec : policy.learned_source->records)
      if (rec.name.rfind("t.", 0) == 0) out.add(rec.name, rec.dims, rec.values);
  }
  return out;
}

}  // namespace i2p::inflate
