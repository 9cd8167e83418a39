#pragma once

#include <Eigen/Core>

#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace i2p {

/// Row-major dense matrix; rows are sites (voxels, pixels, samples), columns are channels.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using RowMatrixF = RowMatrix<float>;
using RowMatrixD = RowMatrix<double>;

// ---------------------------------------------------------------------------
// Errors. One subclass per contract-level failure kind.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define I2P_DEFINE_ERROR(NAME) \
  struct NAME : Error {        \
    using Error::Error;        \
  }

I2P_DEFINE_ERROR(InvalidInput);
I2P_DEFINE_ERROR(Unsupported);
I2P_DEFINE_ERROR(ShapeError);
I2P_DEFINE_ERROR(StateError);
I2P_DEFINE_ERROR(CoordinateError);
I2P_DEFINE_ERROR(ArchiveError);
I2P_DEFINE_ERROR(PolicyError);
I2P_DEFINE_ERROR(FormatError);
I2P_DEFINE_ERROR(CorruptionError);
I2P_DEFINE_ERROR(ParseError);
I2P_DEFINE_ERROR(NumericError);

#undef I2P_DEFINE_ERROR

// ---------------------------------------------------------------------------
// Integer voxel coordinates.
// ---------------------------------------------------------------------------

/// Voxel index triple. Axis convention used throughout: x pairs with the
/// kernel's kx / dense H axis, y with ky / W, z with kz / D.
struct Coord3 {
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t z = 0;

  friend auto operator<=>(const Coord3&, const Coord3&) = default;
};

/// Batched coordinate: sample id + voxel index.
struct Coord4 {
  std::int32_t s = 0;
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t z = 0;

  friend auto operator<=>(const Coord4&, const Coord4&) = default;
};

/// floor(a/b) for possibly negative a (b > 0).
constexpr std::int32_t floor_div(std::int32_t a, std::int32_t b) {
  std::int32_t q = a / b;
  return (a % b != 0 && (a < 0) != (b < 0)) ? q - 1 : q;
}

namespace detail {
inline std::size_t hash_mix(std::size_t h, std::size_t v) {
  // splitmix64-style combine
  v += 0x9e3779b97f4a7c15ull + h;
  v = (v ^ (v >> 30)) * 0xbf58476d1ce4e5b9ull;
  v = (v ^ (v >> 27)) * 0x94d049bb133111ebull;
  return v ^ (v >> 31);
}
}  // namespace detail

struct Coord3Hash {
  std::size_t operator()(const Coord3& c) const {
    std::size_t h = detail::hash_mix(0, static_cast<std::uint32_t>(c.x));
    h = detail::hash_mix(h, static_cast<std::uint32_t>(c.y));
    return detail::hash_mix(h, static_cast<std::uint32_t>(c.z));
  }
};

struct Coord4Hash {
  std::size_t operator()(const Coord4& c) const {
    std::size_t h = detail::hash_mix(0, static_cast<std::uint32_t>(c.s));
    h = detail::hash_mix(h, static_cast<std::uint32_t>(c.x));
    h = detail::hash_mix(h, static_cast<std::uint32_t>(c.y));
    return detail::hash_mix(h, static_cast<std::uint32_t>(c.z));
  }
};

/// Half-open integer box [lo, hi) per axis.
struct Box3 {
  Coord3 lo;
  Coord3 hi;

  bool contains(const Coord3& c) const {
    return c.x >= lo.x && c.x < hi.x && c.y >= lo.y && c.y < hi.y && c.z >= lo.z && c.z < hi.z;
  }
  std::int64_t extent_x() const { return std::int64_t(hi.x) - lo.x; }
  std::int64_t extent_y() const { return std::int64_t(hi.y) - lo.y; }
  std::int64_t extent_z() const { return std::int64_t(hi.z) - lo.z; }
};

// ---------------------------------------------------------------------------
// Dense 4D grid [C, D, H, W] with D <- z, H <- x, W <- y.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct Dense4 {
  int C = 0, D = 0, H = 0, W = 0;
  Coord3 origin;  // world voxel index of cell (d,h,w) = (0,0,0)
  std::vector<Scalar> v;

  Dense4() = default;
  Dense4(int c, int d, int h, int w, Coord3 org = {})
      : C(c), D(d), H(h), W(w), origin(org), v(std::size_t(c) * d * h * w, Scalar(0)) {}

  std::size_t index(int c, int d, int h, int w) const {
    return ((std::size_t(c) * D + d) * H + h) * W + w;
  }
  Scalar& at(int c, int d, int h, int w) { return v[index(c, d, h, w)]; }
  const Scalar& at(int c, int d, int h, int w) const { return v[index(c, d, h, w)]; }
};

using Dense4F = Dense4<float>;
using Dense4D = Dense4<double>;

}  // namespace i2p
