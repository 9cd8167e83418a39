#pragma once

#include "i2p/types.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

namespace i2p::voxel {

/// Unordered points with optional per-point feature rows and class labels.
struct PointCloud {
  RowMatrix<float> positions;  // P x 3
  RowMatrix<float> features;   // P x F, or 0x0 when absent
  std::vector<std::int32_t> labels;  // empty or size P

  Eigen::Index size() const { return positions.rows(); }
  bool has_features() const { return features.rows() > 0; }
  bool has_labels() const { return !labels.empty(); }
};

/// Active integer coordinates plus one feature row per coordinate.
/// Everything not listed in `coords` is implicitly zero.
template <typename Scalar>
struct SparseVoxelTensor {
  std::vector<Coord3> coords;  // unique, sorted
  RowMatrix<Scalar> feats;     // coords.size() x C
  float voxel_size = 1.0f;
  int stride_level = 0;

  Eigen::Index size() const { return static_cast<Eigen::Index>(coords.size()); }
  Eigen::Index channels() const { return feats.cols(); }
};

using SparseVoxelTensorF = SparseVoxelTensor<float>;
using SparseVoxelTensorD = SparseVoxelTensor<double>;

/// Point <-> voxel correspondence produced by voxelize().
struct VoxelPointMap {
  std::vector<std::int32_t> forward;               // per point: voxel row
  std::vector<std::vector<std::int32_t>> inverse;  // per voxel: member point rows
};

/// Quantize a point cloud onto the integer grid of edge `voxel_size`.
/// A point lands in voxel floor(p / voxel_size) per axis; each active voxel
/// carries the mean feature of its member points (accumulated in double).
/// When the cloud has no feature channels the xyz coordinates themselves are
/// used as a 3-wide feature.
template <typename Scalar = float>
std::pair<SparseVoxelTensor<Scalar>, VoxelPointMap> voxelize(const PointCloud& pc, float voxel_size) {
  if (pc.size() == 0) throw InvalidInput("voxelize: empty point cloud");
  if (!(voxel_size > 0.0f)) throw InvalidInput("voxelize: voxel_size must be positive");
  if (!pc.positions.allFinite()) throw InvalidInput("voxelize: non-finite coordinate");
  if (pc.has_features() && pc.features.rows() != pc.size())
    throw InvalidInput("voxelize: feature row count mismatch");
  if (pc.has_labels() && static_cast<Eigen::Index>(pc.labels.size()) != pc.size())
    throw InvalidInput("voxelize: label count mismatch");

  const Eigen::Index n = pc.size();
  std::vector<Coord3> keys(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    keys[i] = {static_cast<std::int32_t>(std::floor(pc.positions(i, 0) / voxel_size)),
               static_cast<std::int32_t>(std::floor(pc.positions(i, 1) / voxel_size)),
               static_cast<std::int32_t>(std::floor(pc.positions(i, 2) / voxel_size))};
  }

  // Deterministic reduction: voxel rows in sorted coordinate order.
  std::map<Coord3, std::int32_t> rows;
  for (const Coord3& k : keys) rows.emplace(k, 0);
  std::int32_t next = 0;
  for (auto& [coord, row] : rows) row = next++;

  const Eigen::Index width = pc.has_features() ? pc.features.cols() : 3;
  RowMatrix<double> sums = RowMatrix<double>::Zero(next, width);
  std::vector<std::int32_t> counts(static_cast<std::size_t>(next), 0);

  VoxelPointMap map;
  map.forward.resize(static_cast<std::size_t>(n));
  map.inverse.resize(static_cast<std::size_t>(next));
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::int32_t row = rows.find(keys[i])->second;
    map.forward[static_cast<std::size_t>(i)] = row;
    map.inverse[static_cast<std::size_t>(row)].push_back(static_cast<std::int32_t>(i));
    if (pc.has_features())
      sums.row(row) += pc.features.row(i).template cast<double>();
    else
      sums.row(row) += pc.positions.row(i).template cast<double>();
    ++counts[static_cast<std::size_t>(row)];
  }

  SparseVoxelTensor<Scalar> t;
  t.voxel_size = voxel_size;
  t.stride_level = 0;
  t.coords.resize(static_cast<std::size_t>(next));
  for (const auto& [coord, row] : rows) t.coords[static_cast<std::size_t>(row)] = coord;
  t.feats.resize(next, width);
  for (std::int32_t r = 0; r < next; ++r)
    t.feats.row(r) = (sums.row(r) / double(counts[static_cast<std::size_t>(r)])).template cast<Scalar>();
  return {std::move(t), std::move(map)};
}

/// Per-voxel class id: the most frequent member-point label, ties broken by
/// the smallest class id.
inline std::vector<std::int32_t> majority_voxel_labels(const PointCloud& pc, const VoxelPointMap& map) {
  if (!pc.has_labels()) throw InvalidInput("majority_voxel_labels: point cloud has no labels");
  if (map.forward.size() != static_cast<std::size_t>(pc.size()))
    throw InvalidInput("majority_voxel_labels: map does not match cloud");

  std::vector<std::int32_t> out(map.inverse.size(), 0);
  std::map<std::int32_t, std::int32_t> hist;
  for (std::size_t v = 0; v < map.inverse.size(); ++v) {
    hist.clear();
    for (std::int32_t p : map.inverse[v]) ++hist[pc.labels[static_cast<std::size_t>(p)]];
    std::int32_t best = 0, best_count = -1;
    for (const auto& [label, count] : hist) {
      if (count > best_count) {  // ordered map: first max is the smallest id
        best = label;
        best_count = count;
      }
    }
    out[v] = best;
  }
  return out;
}

/// Broadcast per-voxel predictions back onto the member points.
inline std::vector<std::int32_t> scatter_to_points(const std::vector<std::int32_t>& voxel_preds,
                                                   const VoxelPointMap& map) {
  if (voxel_preds.size() != map.inverse.size())
    throw InvalidInput("scatter_to_points: prediction/voxel count mismatch");
  std::vector<std::int32_t> out(map.forward.size(), 0);
  for (std::size_t p = 0; p < map.forward.size(); ++p)
    out[p] = voxel_preds[static_cast<std::size_t>(map.forward[p])];
  return out;
}

/// Zero-fill a sparse tensor into a dense [C, D, H, W] grid over `bounds`
/// (half-open). Empty cells are exactly zero.
template <typename Scalar>
Dense4<Scalar> to_dense(const SparseVoxelTensor<Scalar>& t, const Box3& bounds) {
  Dense4<Scalar> g(static_cast<int>(t.channels()), static_cast<int>(bounds.extent_z()),
                   static_cast<int>(bounds.extent_x()), static_cast<int>(bounds.extent_y()), bounds.lo);
  for (std::size_t r = 0; r < t.coords.size(); ++r) {
    const Coord3& c = t.coords[r];
    if (!bounds.contains(c))
      throw InvalidInput("to_dense: coordinate outside bounds");
    for (int ch = 0; ch < g.C; ++ch)
      g.at(ch, c.z - bounds.lo.z, c.x - bounds.lo.x, c.y - bounds.lo.y) =
          t.feats(static_cast<Eigen::Index>(r), ch);
  }
  return g;
}

/// Inverse of to_dense: cells with any nonzero channel become active sites.
template <typename Scalar>
SparseVoxelTensor<Scalar> from_dense(const Dense4<Scalar>& g, float voxel_size = 1.0f, int stride_level = 0) {
  SparseVoxelTensor<Scalar> t;
  t.voxel_size = voxel_size;
  t.stride_level = stride_level;
  std::vector<Eigen::Index> active;
  for (int d = 0; d < g.D; ++d)
    for (int h = 0; h < g.H; ++h)
      for (int w = 0; w < g.W; ++w) {
        bool nonzero = false;
        for (int c = 0; c < g.C && !nonzero; ++c) nonzero = g.at(c, d, h, w) != Scalar(0);
        if (nonzero) {
          t.coords.push_back({g.origin.x + h, g.origin.y + w, g.origin.z + d});
          active.push_back((static_cast<Eigen::Index>(d) * g.H + h) * g.W + w);
        }
      }
  // scan order above is (z, x, y); resort to the canonical (x, y, z) order
  std::vector<std::size_t> perm(t.coords.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::sort(perm.begin(), perm.end(),
            [&](std::size_t a, std::size_t b) { return t.coords[a] < t.coords[b]; });

  std::vector<Coord3> coords(t.coords.size());
  t.feats.resize(static_cast<Eigen::Index>(t.coords.size()), g.C);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    coords[i] = t.coords[perm[i]];
    const Eigen::Index cell = active[perm[i]];
    const int d = static_cast<int>(cell / (g.H * g.W));
    const int h = static_cast<int>((cell / g.W) % g.H);
    const int w = static_cast<int>(cell % g.W);
    for (int c = 0; c < g.C; ++c) t.feats(static_cast<Eigen::Index>(i), c) = g.at(c, d, h, w);
  }
  t.coords = std::move(coords);
  return t;
}

}  // namespace i2p::voxel
