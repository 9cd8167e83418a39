#pragma once

#include "i2p/types.hpp"
#include "i2p/voxel.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace i2p::io {

/// CRC-32 (IEEE 802.3, polynomial 0xEDB88320), running form.
std::uint32_t crc32(const std::uint8_t* data, std::size_t len, std::uint32_t crc = 0);
std::uint32_t crc32(const std::vector<std::uint8_t>& bytes);

// ---------------------------------------------------------------------------
// Weight archive (.i2pw)
//
// Little-endian layout:
//   header: magic "I2PW" | u32 version=1 | u32 record count | u8 tag (2|3)
//   record: u32 name len | name bytes | u8 dtype (0=f32) | u32 ndims |
//           ndims x u64 dims | prod(dims) x f32 payload | u32 crc32 of the
//           record bytes before this field
// ---------------------------------------------------------------------------

struct TensorRecord {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> values;

  std::uint64_t numel() const;
};

struct WeightArchive {
  static constexpr std::uint8_t kTag2D = 2;
  static constexpr std::uint8_t kTag3D = 3;

  std::uint8_t tag = kTag3D;
  std::vector<TensorRecord> records;

  bool has(const std::string& name) const;
  const TensorRecord* find(const std::string& name) const;
  const TensorRecord& at(const std::string& name) const;
  TensorRecord& at(const std::string& name);

  /// Append a record; rejects duplicate names, dim/payload mismatch, and
  /// non-finite values (InvalidInput).
  void add(std::string name, std::vector<std::uint64_t> dims, std::vector<float> values);
};

std::vector<std::uint8_t> to_bytes(const WeightArchive& a);
WeightArchive archive_from_bytes(const std::vector<std::uint8_t>& bytes);
void write_archive(const WeightArchive& a, const std::string& path);
WeightArchive read_archive(const std::string& path);

// ---------------------------------------------------------------------------
// Sparse voxel tensor (.svt)
//
// Little-endian layout: magic "I2PS" | u32 version=1 | u32 coord count |
// u32 channel width | f32 voxel_size | count x (i32 x, i32 y, i32 z) |
// count*C x f32 row-major features | u32 crc32 of all preceding bytes.
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> to_bytes(const voxel::SparseVoxelTensorF& t);
voxel::SparseVoxelTensorF svt_from_bytes(const std::vector<std::uint8_t>& bytes);
void write_svt(const voxel::SparseVoxelTensorF& t, const std::string& path);
voxel::SparseVoxelTensorF read_svt(const std::string& path);

// ---------------------------------------------------------------------------
// Point-cloud text: header "#cols xyz [f<F>] [label]", then one point per
// line as whitespace-separated numbers in header order.
// ---------------------------------------------------------------------------

void write_pointcloud(const voxel::PointCloud& pc, const std::string& path);
voxel::PointCloud read_pointcloud(const std::string& path);
voxel::PointCloud pointcloud_from_string(const std::string& text, const std::string& origin);

// ---------------------------------------------------------------------------
// Run configuration: flat key=value text, unknown keys rejected.
// ---------------------------------------------------------------------------

struct RunConfig {
  std::string arch;
  std::string regime;
  std::string transform = "default";
  std::string data;
  std::string out;
  std::string schedule = "cosine";
  double voxel_size = 0.05;
  double width_mult = 0.25;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 60;
  int batch_size = 8;
  std::uint64_t seed = 0;
  int classes = 5;
  int subset_per_class = 0;  // 0 = use every sample

  /// Canonical sorted key=value rendering (used in manifests).
  std::string to_text() const;
  /// Apply one key=value pair; unknown key or ill-typed value throws ParseError.
  void set(const std::string& key, const std::string& value, const std::string& where);
};

RunConfig config_from_string(const std::string& text, const std::string& origin);
RunConfig read_config(const std::string& path);

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> read_file(const std::string& path);
/// Write via temp file + rename so readers never observe partial content.
void atomic_write(const std::string& path, const std::uint8_t* data, std::size_t len);
void atomic_write_text(const std::string& path, const std::string& text);

}  // namespace i2p::io
