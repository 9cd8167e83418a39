#include "i2p/kernel_map.hpp"

#include <algorithm>
#include <unordered_map>

namespace i2p::nn {

namespace {

void check_supported(int K, int stride) {
  const bool ok_k = K >= 1 && K <= 3;
  const bool ok_s = stride == 1 || stride == 2;
  if (!ok_k || !ok_s)
    throw Unsupported("kernel map: unsupported K=" + std::to_string(K) +
                      " stride=" + std::to_string(stride));
}

std::unordered_map<Coord4, std::int32_t, Coord4Hash> row_index(const std::vector<Coord4>& coords) {
  std::unordered_map<Coord4, std::int32_t, Coord4Hash> idx;
  idx.reserve(coords.size() * 2);
  for (std::size_t i = 0; i < coords.size(); ++i)
    idx.emplace(coords[i], static_cast<std::int32_t>(i));
  return idx;
}

}  // namespace

KernelMap build_kernel_map(const std::vector<Coord4>& in_coords, int K, int stride) {
  check_supported(K, stride);

  KernelMap km;
  km.K = K;
  km.stride = stride;
  km.n_in = static_cast<std::int64_t>(in_coords.size());
  km.pairs.resize(static_cast<std::size_t>(K * K * K));

  if (stride == 1) {
    km.out_coords = in_coords;  // submanifold: active set is preserved
  } else {
    km.out_coords.reserve(in_coords.size());
    for (const Coord4& c : in_coords)
      km.out_coords.push_back(
          {c.s, floor_div(c.x, stride), floor_div(c.y, stride), floor_div(c.z, stride)});
    std::sort(km.out_coords.begin(), km.out_coords.end());
    km.out_coords.erase(std::unique(km.out_coords.begin(), km.out_coords.end()),
                        km.out_coords.end());
  }

  const auto in_rows = row_index(in_coords);
  const std::int32_t pad = K / 2;
  for (std::size_t o = 0; o < km.out_coords.size(); ++o) {
    const Coord4& oc = km.out_coords[o];
    for (int kz = 0; kz < K; ++kz)
      for (int kx = 0; kx < K; ++kx)
        for (int ky = 0; ky < K; ++ky) {
          const Coord4 ic{oc.s, oc.x * stride + kx - pad, oc.y * stride + ky - pad,
                          oc.z * stride + kz - pad};
          const auto it = in_rows.find(ic);
          if (it == in_rows.end()) continue;
          const int t = (kz * K + kx) * K + ky;
          km.pairs[static_cast<std::size_t>(t)].emplace_back(it->second,
                                                             static_cast<std::int32_t>(o));
        }
  }
  return km;
}

KernelMap build_deconv_map(const std::vector<Coord4>& in_coords,
                           const std::vector<Coord4>& target_coords, int K, int stride) {
  check_supported(K, stride);

  KernelMap km;
  km.K = K;
  km.stride = stride;
  km.n_in = static_cast<std::int64_t>(in_coords.size());
  km.out_coords = target_coords;
  std::sort(km.out_coords.begin(), km.out_coords.end());
  km.out_coords.erase(std::unique(km.out_coords.begin(), km.out_coords.end()),
                      km.out_coords.end());
  km.pairs.resize(static_cast<std::size_t>(K * K * K));

  const auto in_rows = row_index(in_coords);
  for (std::size_t o = 0; o < km.out_coords.size(); ++o) {
    const Coord4& oc = km.out_coords[o];
    bool reached = false;
    for (int kz = 0; kz < K; ++kz)
      for (int kx = 0; kx < K; ++kx)
        for (int ky = 0; ky < K; ++ky) {
          // transposed stencil: o = i*stride + offset, no padding
          const std::int32_t ix = oc.x - kx, iy = oc.y - ky, iz = oc.z - kz;
          if (ix % stride || iy % stride || iz % stride) continue;
          const Coord4 ic{oc.s, ix / stride, iy / stride, iz / stride};
          const auto it = in_rows.find(ic);
          if (it == in_rows.end()) continue;
          const int t = (kz * K + kx) * K + ky;
          km.pairs[static_cast<std::size_t>(t)].emplace_back(it->second,
                                                             static_cast<std::int32_t>(o));
          reached = true;
        }
    if (!reached)
      throw CoordinateError("deconv: target coordinate unreachable from input active set");
  }
  return km;
}

}  // namespace i2p::nn
