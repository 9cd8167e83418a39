#pragma once

#include "i2p/rng.hpp"
#include "i2p/types.hpp"
#include "i2p/voxel.hpp"

#include <algorithm>
#include <set>
#include <vector>

namespace testutil {

using namespace i2p;

/// Random sparse tensor on [0, extent)^3 at roughly the given density.
template <typename Scalar>
voxel::SparseVoxelTensor<Scalar> random_scene(int extent, double density, int channels, Rng& rng) {
  std::set<Coord3> picked;
  const auto cells = static_cast<std::int64_t>(extent) * extent * extent;
  const auto want = std::max<std::int64_t>(1, static_cast<std::int64_t>(density * double(cells)));
  while (static_cast<std::int64_t>(picked.size()) < want) {
    picked.insert({static_cast<std::int32_t>(rng.below(extent)),
                   static_cast<std::int32_t>(rng.below(extent)),
                   static_cast<std::int32_t>(rng.below(extent))});
  }
  voxel::SparseVoxelTensor<Scalar> t;
  t.coords.assign(picked.begin(), picked.end());
  t.feats.resize(static_cast<Eigen::Index>(t.coords.size()), channels);
  rng.fill_uniform(t.feats, -1.0, 1.0);
  return t;
}

template <typename Scalar>
RowMatrix<Scalar> random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = -1.0,
                                double hi = 1.0) {
  RowMatrix<Scalar> m(rows, cols);
  rng.fill_uniform(m, lo, hi);
  return m;
}

/// Random point cloud in [0, 1)^3 with `width` feature channels (0 = none).
inline voxel::PointCloud random_cloud(int points, int width, Rng& rng) {
  voxel::PointCloud pc;
  pc.positions.resize(points, 3);
  rng.fill_uniform(pc.positions, 0.0, 1.0);
  if (width > 0) {
    pc.features.resize(points, width);
    rng.fill_uniform(pc.features, -1.0, 1.0);
  }
  return pc;
}

}  // namespace testutil
