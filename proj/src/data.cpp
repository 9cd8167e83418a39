#include "i2p/data.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

namespace i2p::data {

namespace fs = std::filesystem;

const char* shape_name(int cls) {
  static const std::array<const char*, kNumShapeClasses> names = {"sphere", "cube", "torus",
                                                                  "cone", "cross"};
  if (cls < 0 || cls >= kNumShapeClasses) throw InvalidInput("shape class out of range");
  return names[static_cast<std::size_t>(cls)];
}

// ---------------------------------------------------------------------------
// 2D silhouettes
// ---------------------------------------------------------------------------

bool inside_silhouette(int cls, double u, double v) {
  const double r2 = u * u + v * v;
  switch (cls) {
    case 0:  // circle
      return r2 <= 1.0;
    case 1:  // square
      return std::max(std::abs(u), std::abs(v)) <= 0.8;
    case 2:  // annulus
      return r2 >= 0.45 * 0.45 && r2 <= 1.0;
    case 3: {  // triangle, apex up
      if (v < -0.75 || v > 1.0) return false;
      // edges from apex (0, 1) to the base corners (+-0.95, -0.75)
      const double half = 0.95 * (1.0 - v) / 1.75;
      return std::abs(u) <= half;
    }
    case 4:  // plus
      return (std::abs(u) <= 0.35 && std::abs(v) <= 1.0) ||
             (std::abs(v) <= 0.35 && std::abs(u) <= 1.0);
    default:
      throw InvalidInput("shape class out of range");
  }
}

ImageSet gen_synthetic_2d(int classes, int n_per_class, int size, std::uint64_t seed) {
  if (classes < 1 || classes > kNumShapeClasses)
    throw InvalidInput("gen_synthetic_2d: classes must be in [1, 5]");
  if (n_per_class < 1 || size < 4) throw InvalidInput("gen_synthetic_2d: degenerate request");

  Rng rng(seed);
  ImageSet set;
  set.size = size;
  set.classes = classes;
  const double c = (size - 1) / 2.0;
  for (int cls = 0; cls < classes; ++cls) {
    for (int s = 0; s < n_per_class; ++s) {
      const double theta = rng.uniform(0.0, 2.0 * M_PI);
      const double radius = rng.uniform(0.55, 0.90) * (size / 2.0);
      const double ct = std::cos(theta), st = std::sin(theta);
      RowMatrix<float> img(size, size);
      for (int x = 0; x < size; ++x)
        for (int y = 0; y < size; ++y) {
          const double dx = (x - c) / radius, dy = (y - c) / radius;
          // rotate the pixel back into the shape's canonical frame
          const double u = ct * dx + st * dy;
          const double v = -st * dx + ct * dy;
          const double value = inside_silhouette(cls, u, v) ? 1.0 : 0.0;
          img(x, y) = static_cast<float>(value + 0.08 * rng.normal());
        }
      set.images.push_back(std::move(img));
      set.labels.push_back(cls);
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// 3D surfaces
// ---------------------------------------------------------------------------

namespace {

struct Vec3 {
  double x, y, z;
};

Vec3 sample_sphere(Rng& rng) {
  double x, y, z, n2;
  do {
    x = rng.normal();
    y = rng.normal();
    z = rng.normal();
    n2 = x * x + y * y + z * z;
  } while (n2 < 1e-12);
  const double inv = 1.0 / std::sqrt(n2);
  return {x * inv, y * inv, z * inv};
}

/// Point on the surface of an axis-aligned box with half-extents h, faces
/// weighted by area.
Vec3 sample_box_surface(Rng& rng, const Vec3& h) {
  const double ax = h.y * h.z, ay = h.x * h.z, az = h.x * h.y;  // face-pair areas (/4)
  double pick = rng.uniform() * (ax + ay + az);
  const double sgn = rng.uniform() < 0.5 ? -1.0 : 1.0;
  if (pick < ax) return {sgn * h.x, rng.uniform(-h.y, h.y), rng.uniform(-h.z, h.z)};
  pick -= ax;
  if (pick < ay) return {rng.uniform(-h.x, h.x), sgn * h.y, rng.uniform(-h.z, h.z)};
  return {rng.uniform(-h.x, h.x), rng.uniform(-h.y, h.y), sgn * h.z};
}

Vec3 sample_cube(Rng& rng) { return sample_box_surface(rng, {0.75, 0.75, 0.75}); }

Vec3 sample_torus(Rng& rng) {
  const double R = 0.7, r = 0.3;
  // area-correct: density along the tube angle is proportional to R + r cos v
  double v;
  do {
    v = rng.uniform(0.0, 2.0 * M_PI);
  } while (rng.uniform() * (R + r) > R + r * std::cos(v));
  const double u = rng.uniform(0.0, 2.0 * M_PI);
  const double ring = R + r * std::cos(v);
  return {ring * std::cos(u), ring * std::sin(u), r * std::sin(v)};
}

Vec3 sample_cone(Rng& rng) {
  const double h = 0.9, rb = 0.85;  // apex at z=h, base disc at z=-h
  const double slant = std::sqrt(rb * rb + 4.0 * h * h);
  const double lateral = M_PI * rb * slant, base = M_PI * rb * rb;
  const double theta = rng.uniform(0.0, 2.0 * M_PI);
  if (rng.uniform() * (lateral + base) < base) {
    const double rho = rb * std::sqrt(rng.uniform());
    return {rho * std::cos(theta), rho * std::sin(theta), -h};
  }
  const double t = std::sqrt(rng.uniform());  // fraction of the way from apex to rim
  return {t * rb * std::cos(theta), t * rb * std::sin(theta), h - 2.0 * h * t};
}

Vec3 sample_cross(Rng& rng) {
  // union of three orthogonal arms; its top-down silhouette is the 2D plus
  const double L = 1.0, w = 0.3;
  const std::array<Vec3, 3> arms = {Vec3{L, w, w}, Vec3{w, L, w}, Vec3{w, w, L}};
  for (;;) {
    const auto arm = static_cast<std::size_t>(rng.below(3));
    const Vec3 p = sample_box_surface(rng, arms[arm]);
    bool interior = false;
    for (std::size_t other = 0; other < arms.size(); ++other) {
      if (other == arm) continue;
      const Vec3& h = arms[other];
      if (std::abs(p.x) < h.x - 1e-9 && std::abs(p.y) < h.y - 1e-9 &&
          std::abs(p.z) < h.z - 1e-9) {
        interior = true;
        break;
      }
    }
    if (!interior) return p;
  }
}

Vec3 sample_surface(int cls, Rng& rng) {
  switch (cls) {
    case 0: return sample_sphere(rng);
    case 1: return sample_cube(rng);
    case 2: return sample_torus(rng);
    case 3: return sample_cone(rng);
    case 4: return sample_cross(rng);
    default: throw InvalidInput("shape class out of range");
  }
}

struct Rot3 {
  double m[3][3];

  Vec3 apply(const Vec3& p) const {
    return {m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z};
  }
};

/// Full rotation about z composed with a small tilt about x, so the top-down
/// silhouette class stays recognizable.
Rot3 random_pose(Rng& rng) {
  const double a = rng.uniform(0.0, 2.0 * M_PI);
  const double b = rng.uniform(-1.0, 1.0) * (15.0 * M_PI / 180.0);
  const double ca = std::cos(a), sa = std::sin(a);
  const double cb = std::cos(b), sb = std::sin(b);
  Rot3 rz{{{ca, -sa, 0}, {sa, ca, 0}, {0, 0, 1}}};
  Rot3 rx{{{1, 0, 0}, {0, cb, -sb}, {0, sb, cb}}};
  Rot3 out{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      out.m[i][j] = 0.0;
      for (int k = 0; k < 3; ++k) out.m[i][j] += rz.m[i][k] * rx.m[k][j];
    }
  return out;
}

voxel::PointCloud make_cloud(int cls, int points, double scale, const Rot3& rot, const Vec3& shift,
                             Rng& rng) {
  voxel::PointCloud pc;
  pc.positions.resize(points, 3);
  for (int i = 0; i < points; ++i) {
    const Vec3 p = rot.apply(sample_surface(cls, rng));
    pc.positions(i, 0) = static_cast<float>(p.x * scale + shift.x);
    pc.positions(i, 1) = static_cast<float>(p.y * scale + shift.y);
    pc.positions(i, 2) = static_cast<float>(p.z * scale + shift.z);
  }
  return pc;
}

}  // namespace

CloudSet gen_synthetic_3d(int classes, int n_per_class, int points, std::uint64_t seed) {
  if (classes < 1 || classes > kNumShapeClasses)
    throw InvalidInput("gen_synthetic_3d: classes must be in [1, 5]");
  if (n_per_class < 1 || points < 8) throw InvalidInput("gen_synthetic_3d: degenerate request");

  Rng rng(seed);
  CloudSet set;
  set.classes = classes;
  for (int cls = 0; cls < classes; ++cls)
    for (int s = 0; s < n_per_class; ++s) {
      const double scale = rng.uniform(0.25, 0.40);
      const Rot3 rot = random_pose(rng);
      set.clouds.push_back(make_cloud(cls, points, scale, rot, {0, 0, 0}, rng));
      set.labels.push_back(cls);
    }
  return set;
}

CloudSet gen_synthetic_3d_seg(int classes, int n_scenes, int points, std::uint64_t seed) {
  if (classes < 2 || classes > kNumShapeClasses)
    throw InvalidInput("gen_synthetic_3d_seg: classes must be in [2, 5]");
  if (n_scenes < 1 || points < 16) throw InvalidInput("gen_synthetic_3d_seg: degenerate request");

  Rng rng(seed);
  CloudSet set;
  set.classes = classes;
  set.seg = true;
  const int per_object = points / 2;
  for (int s = 0; s < n_scenes; ++s) {
    const int a = static_cast<int>(rng.below(classes));
    const int b = (a + 1 + static_cast<int>(rng.below(classes - 1))) % classes;
    const double alpha = rng.uniform(0.0, 2.0 * M_PI);
    const double gap = rng.uniform(0.45, 0.60);
    const Vec3 off{gap * std::cos(alpha), gap * std::sin(alpha), 0.0};

    voxel::PointCloud scene;
    scene.positions.resize(2 * per_object, 3);
    scene.labels.resize(static_cast<std::size_t>(2 * per_object));
    const int objs[2] = {a, b};
    for (int o = 0; o < 2; ++o) {
      const double scale = rng.uniform(0.20, 0.30);
      const Rot3 rot = random_pose(rng);
      const Vec3 shift = o == 0 ? Vec3{-off.x, -off.y, -off.z} : off;
      voxel::PointCloud part = make_cloud(objs[o], per_object, scale, rot, shift, rng);
      scene.positions.middleRows(o * per_object, per_object) = part.positions;
      for (int i = 0; i < per_object; ++i)
        scene.labels[static_cast<std::size_t>(o * per_object + i)] = objs[o];
    }
    set.clouds.push_back(std::move(scene));
  }
  return set;
}

CloudSet select(const CloudSet& set, const std::vector<int>& indices) {
  CloudSet out;
  out.classes = set.classes;
  out.seg = set.seg;
  for (int i : indices) {
    out.clouds.push_back(set.clouds.at(static_cast<std::size_t>(i)));
    if (!set.seg) out.labels.push_back(set.labels.at(static_cast<std::size_t>(i)));
  }
  return out;
}

ImageSet select(const ImageSet& set, const std::vector<int>& indices) {
  ImageSet out;
  out.classes = set.classes;
  out.size = set.size;
  for (int i : indices) {
    out.images.push_back(set.images.at(static_cast<std::size_t>(i)));
    out.labels.push_back(set.labels.at(static_cast<std::size_t>(i)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Disk layout
// ---------------------------------------------------------------------------

void write_cloud_dataset(const CloudSet& set, const std::string& dir) {
  if (set.clouds.empty()) throw InvalidInput("write_cloud_dataset: empty set");
  if (!set.seg && set.labels.size() != set.clouds.size())
    throw InvalidInput("write_cloud_dataset: label count mismatch");
  fs::create_directories(dir);

  std::ostringstream index;
  index << "#classes " << set.classes << " mode " << (set.seg ? "seg" : "cls") << "\n";
  char name[32];
  for (std::size_t i = 0; i < set.clouds.size(); ++i) {
    std::snprintf(name, sizeof(name), "sample_%05zu.txt", i);
    io::write_pointcloud(set.clouds[i], (fs::path(dir) / name).string());
    index << name;
    if (!set.seg) index << " " << set.labels[i];
    index << "\n";
  }
  io::atomic_write_text((fs::path(dir) / "index.txt").string(), index.str());
}

CloudSet read_cloud_dataset(const std::string& dir) {
  const std::string index_path = (fs::path(dir) / "index.txt").string();
  const std::vector<std::uint8_t> raw = io::read_file(index_path);
  std::istringstream in(std::string(raw.begin(), raw.end()));

  std::string header;
  if (!std::getline(in, header)) throw FormatError(index_path + ": empty index");
  CloudSet set;
  {
    std::istringstream h(header);
    std::string tag, mode_tag, mode;
    if (!(h >> tag >> set.classes >> mode_tag >> mode) || tag != "#classes" ||
        mode_tag != "mode" || (mode != "cls" && mode != "seg") || set.classes < 1)
      throw FormatError(index_path + ": bad header '" + header + "'");
    set.seg = mode == "seg";
  }

  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string file;
    ls >> file;
    if (file.empty()) continue;
    voxel::PointCloud pc = io::read_pointcloud((fs::path(dir) / file).string());
    if (set.seg) {
      if (!pc.has_labels())
        throw FormatError(index_path + ": '" + file + "' lacks per-point labels");
    } else {
      std::int64_t label;
      if (!(ls >> label) || label < 0 || label >= set.classes)
        throw FormatError(index_path + ": bad label on line '" + line + "'");
      set.labels.push_back(static_cast<std::int32_t>(label));
    }
    set.clouds.push_back(std::move(pc));
  }
  if (set.clouds.empty()) throw FormatError(index_path + ": no samples listed");
  return set;
}

void write_image_dataset(const ImageSet& set, const std::string& path) {
  if (set.images.empty()) throw InvalidInput("write_image_dataset: empty set");
  if (set.labels.size() != set.images.size())
    throw InvalidInput("write_image_dataset: label count mismatch");
  const auto n = static_cast<std::uint64_t>(set.images.size());
  const auto size = static_cast<std::uint64_t>(set.size);

  std::vector<float> pixels;
  pixels.reserve(n * size * size);
  for (const RowMatrix<float>& img : set.images) {
    if (img.rows() != set.size || img.cols() != set.size)
      throw InvalidInput("write_image_dataset: image size mismatch");
    pixels.insert(pixels.end(), img.data(), img.data() + img.size());
  }
  std::vector<float> labels(set.labels.begin(), set.labels.end());

  io::WeightArchive a;
  a.tag = io::WeightArchive::kTag2D;
  a.add("images", {n, size, size}, std::move(pixels));
  a.add("labels", {n}, std::move(labels));
  io::write_archive(a, path);
}

ImageSet read_image_dataset(const std::string& path) {
  const io::WeightArchive a = io::read_archive(path);
  const io::TensorRecord& images = a.at("images");
  const io::TensorRecord& labels = a.at("labels");
  if (images.dims.size() != 3 || images.dims[1] != images.dims[2] || images.dims[1] < 1)
    throw FormatError(path + ": images record must be [n, size, size]");
  if (labels.dims.size() != 1 || labels.dims[0] != images.dims[0])
    throw FormatError(path + ": labels record must align with images");

  ImageSet set;
  set.size = static_cast<int>(images.dims[1]);
  const auto n = static_cast<std::size_t>(images.dims[0]);
  const std::size_t px = static_cast<std::size_t>(set.size) * static_cast<std::size_t>(set.size);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    RowMatrix<float> img(set.size, set.size);
    std::copy_n(images.values.begin() + static_cast<std::ptrdiff_t>(i * px), px, img.data());
    set.images.push_back(std::move(img));
    const float l = labels.values[i];
    if (l < 0 || l != std::floor(l)) throw FormatError(path + ": non-integral label");
    set.labels.push_back(static_cast<std::int32_t>(l));
    max_label = std::max(max_label, static_cast<int>(l));
  }
  set.classes = max_label + 1;
  return set;
}

}  // namespace i2p::data
