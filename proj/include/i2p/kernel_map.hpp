#pragma once

#include "i2p/types.hpp"

#include <utility>
#include <vector>

namespace i2p::nn {

/// Gather/scatter plan for one sparse convolution: for each of the K^3 kernel
/// offsets, the (input_row, output_row) pairs it connects. Offsets are indexed
/// t = kz*K^2 + kx*K + ky. Pair lists are sorted by (output_row, input_row);
/// out_coords is sorted lexicographically by (sample, x, y, z).
struct KernelMap {
  int K = 0;
  int stride = 1;
  std::int64_t n_in = 0;
  std::vector<Coord4> out_coords;
  std::vector<std::vector<std::pair<std::int32_t, std::int32_t>>> pairs;  // size K^3

  int offsets() const { return K * K * K; }
};

/// Plan a stride-1 (submanifold: output sites = input sites) or stride-2
/// (output sites = floor(c/stride), deduplicated) convolution. Padding is
/// K div 2 on every axis. Supported: K in {1,2,3}, stride in {1,2}; anything
/// else throws Unsupported. Input coordinates must be sorted and unique.
KernelMap build_kernel_map(const std::vector<Coord4>& in_coords, int K, int stride);

/// Plan a transposed convolution that scatters each input site to
/// o = i*stride + offset (no padding) and keeps exactly the caller-supplied
/// target sites (the cached encoder active set). A target no input reaches
/// throws CoordinateError. Supported: K in {1,2,3}, stride in {1,2}.
KernelMap build_deconv_map(const std::vector<Coord4>& in_coords,
                           const std::vector<Coord4>& target_coords, int K, int stride);

}  // namespace i2p::nn
