#pragma once

#include "i2p/io.hpp"
#include "i2p/rng.hpp"
#include "i2p/types.hpp"
#include "i2p/voxel.hpp"

#include <string>
#include <vector>

namespace i2p::data {

/// The five shape classes, matched across modalities: each 3D surface's
/// top-down silhouette is the corresponding filled 2D shape.
constexpr int kNumShapeClasses = 5;
const char* shape_name(int cls);  // sphere, cube, torus, cone, cross

struct ImageSet {
  std::vector<RowMatrix<float>> images;  // size x size intensities
  std::vector<std::int32_t> labels;
  int size = 0;
  int classes = 0;
};

struct CloudSet {
  std::vector<voxel::PointCloud> clouds;
  std::vector<std::int32_t> labels;  // per-cloud class (empty when labels are per point)
  int classes = 0;
  bool seg = false;
};

/// Filled silhouettes under random rotation and scale, plus additive Gaussian
/// pixel noise. Deterministic under seed.
ImageSet gen_synthetic_2d(int classes, int n_per_class, int size, std::uint64_t seed);

/// Surface point sets of the matched solids under random rotation (full turn
/// about z, slight tilt) and scale. Deterministic under seed.
CloudSet gen_synthetic_3d(int classes, int n_per_class, int points, std::uint64_t seed);

/// Two-object scenes with per-point labels for segmentation.
CloudSet gen_synthetic_3d_seg(int classes, int n_scenes, int points, std::uint64_t seed);

/// Membership test for one pixel of a silhouette in its canonical frame
/// (shape spans roughly the unit disc). Exposed for tests.
bool inside_silhouette(int cls, double u, double v);

/// Keep only the listed sample indices (order preserved).
CloudSet select(const CloudSet& set, const std::vector<int>& indices);
ImageSet select(const ImageSet& set, const std::vector<int>& indices);

// ---------------------------------------------------------------------------
// On-disk layout.
//
// 3D: a directory of point-cloud text files plus index.txt whose first line
// is "#classes <C> mode <cls|seg>" and whose remaining lines are
// "<file> <label>" (cls) or "<file>" (seg; labels travel inside the clouds).
//
// 2D: a single weight archive holding "images" [n, size, size] and
// "labels" [n].
// ---------------------------------------------------------------------------

void write_cloud_dataset(const CloudSet& set, const std::string& dir);
CloudSet read_cloud_dataset(const std::string& dir);

void write_image_dataset(const ImageSet& set, const std::string& path);
ImageSet read_image_dataset(const std::string& path);

}  // namespace i2p::data
