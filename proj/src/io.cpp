#include "i2p/io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <unordered_set>

namespace i2p::io {

namespace {

constexpr char kArchiveMagic[4] = {'I', '2', 'P', 'W'};
constexpr char kSvtMagic[4] = {'I', '2', 'P', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxNameLen = 1u << 20;
constexpr std::uint32_t kMaxNdims = 32;

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

// --- little-endian byte packing ---------------------------------------------

void put_u8(std::vector<std::uint8_t>& b, std::uint8_t v) { b.push_back(v); }

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_i32(std::vector<std::uint8_t>& b, std::int32_t v) {
  put_u32(b, std::bit_cast<std::uint32_t>(v));
}

void put_f32(std::vector<std::uint8_t>& b, float v) { put_u32(b, std::bit_cast<std::uint32_t>(v)); }

struct Cursor {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;
  const char* what;  // format name for error messages

  std::size_t remaining() const { return bytes.size() - pos; }

  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError(std::string(what) + ": truncated stream");
  }

  std::uint8_t u8() {
    need(1);
    return bytes[pos++];
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos + std::size_t(i)]) << (8 * i);
    pos += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[pos + std::size_t(i)]) << (8 * i);
    pos += 8;
    return v;
  }

  std::int32_t i32() { return std::bit_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

void expect_magic(Cursor& c, const char (&magic)[4]) {
  const std::string got = c.str(4);
  if (got != std::string(magic, 4)) throw FormatError(std::string(c.what) + ": bad magic");
}

// --- strict text number parsing ----------------------------------------------

double parse_double_tok(const std::string& tok, const std::string& where) {
  double v = 0;
  const char* b = tok.data();
  const char* e = b + tok.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) throw ParseError(where + ": expected a number, got '" + tok + "'");
  if (!std::isfinite(v)) throw ParseError(where + ": non-finite value '" + tok + "'");
  return v;
}

long long parse_int_tok(const std::string& tok, const std::string& where) {
  long long v = 0;
  const char* b = tok.data();
  const char* e = b + tok.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e)
    throw ParseError(where + ": expected an integer, got '" + tok + "'");
  return v;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_float(float v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", double(v));
  return buf;
}

}  // namespace

std::uint32_t crc32(const std::uint8_t* data, std::size_t len, std::uint32_t crc) {
  static const std::array<std::uint32_t, 256> table = make_crc_table();
  crc ^= 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

std::uint32_t crc32(const std::vector<std::uint8_t>& bytes) {
  return crc32(bytes.data(), bytes.size());
}

// --- weight archive ----------------------------------------------------------

std::uint64_t TensorRecord::numel() const {
  std::uint64_t n = 1;
  for (std::uint64_t d : dims) n *= d;
  return n;
}

bool WeightArchive::has(const std::string& name) const { return find(name) != nullptr; }

const TensorRecord* WeightArchive::find(const std::string& name) const {
  for (const TensorRecord& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

const TensorRecord& WeightArchive::at(const std::string& name) const {
  const TensorRecord* r = find(name);
  if (!r) throw ArchiveError("archive: missing tensor '" + name + "'");
  return *r;
}

TensorRecord& WeightArchive::at(const std::string& name) {
  for (TensorRecord& r : records)
    if (r.name == name) return r;
  throw ArchiveError("archive: missing tensor '" + name + "'");
}

void WeightArchive::add(std::string name, std::vector<std::uint64_t> dims,
                        std::vector<float> values) {
  if (name.empty()) throw InvalidInput("archive: empty tensor name");
  if (has(name)) throw InvalidInput("archive: duplicate tensor '" + name + "'");
  if (dims.empty()) throw InvalidInput("archive: tensor '" + name + "' has no dims");
  std::uint64_t n = 1;
  for (std::uint64_t d : dims) {
    if (d == 0 || n > (std::uint64_t(1) << 32) / std::max<std::uint64_t>(d, 1))
      throw InvalidInput("archive: bad dims for '" + name + "'");
    n *= d;
  }
  if (n != values.size()) throw InvalidInput("archive: payload size mismatch for '" + name + "'");
  for (float v : values)
    if (!std::isfinite(v)) throw InvalidInput("archive: non-finite value in '" + name + "'");
  records.push_back({std::move(name), std::move(dims), std::move(values)});
}

std::vector<std::uint8_t> to_bytes(const WeightArchive& a) {
  if (a.tag != WeightArchive::kTag2D && a.tag != WeightArchive::kTag3D)
    throw InvalidInput("archive: tag must be 2 or 3");
  std::vector<std::uint8_t> b;
  b.insert(b.end(), kArchiveMagic, kArchiveMagic + 4);
  put_u32(b, kVersion);
  put_u32(b, static_cast<std::uint32_t>(a.records.size()));
  put_u8(b, a.tag);
  // Record CRCs are seeded with the header CRC so a flipped header byte (for
  // example tag 2 <-> 3, both valid) breaks the first record's checksum.
  const std::uint32_t header_crc = crc32(b.data(), b.size());
  for (const TensorRecord& r : a.records) {
    const std::size_t start = b.size();
    put_u32(b, static_cast<std::uint32_t>(r.name.size()));
    b.insert(b.end(), r.name.begin(), r.name.end());
    put_u8(b, 0);  // dtype f32
    put_u32(b, static_cast<std::uint32_t>(r.dims.size()));
    for (std::uint64_t d : r.dims) put_u64(b, d);
    for (float v : r.values) put_f32(b, v);
    put_u32(b, crc32(b.data() + start, b.size() - start, header_crc));
  }
  return b;
}

WeightArchive archive_from_bytes(const std::vector<std::uint8_t>& bytes) {
  Cursor c{bytes, 0, "i2pw"};
  expect_magic(c, kArchiveMagic);
  if (c.u32() != kVersion) throw FormatError("i2pw: unsupported version");
  const std::uint32_t count = c.u32();
  const std::uint8_t tag = c.u8();
  if (tag != WeightArchive::kTag2D && tag != WeightArchive::kTag3D)
    throw FormatError("i2pw: bad dimensionality tag");

  WeightArchive a;
  a.tag = tag;
  const std::uint32_t header_crc = crc32(bytes.data(), c.pos);
  std::unordered_set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t start = c.pos;
    const std::uint32_t nlen = c.u32();
    if (nlen == 0 || nlen > kMaxNameLen) throw FormatError("i2pw: bad name length");
    TensorRecord r;
    r.name = c.str(nlen);
    if (c.u8() != 0) throw FormatError("i2pw: unsupported dtype in '" + r.name + "'");
    const std::uint32_t ndims = c.u32();
    if (ndims == 0 || ndims > kMaxNdims) throw FormatError("i2pw: bad rank in '" + r.name + "'");
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < ndims; ++d) {
      const std::uint64_t v = c.u64();
      r.dims.push_back(v);
      if (v == 0 || v > c.remaining() || n > c.remaining())
        throw FormatError("i2pw: truncated stream");
      n *= v;
    }
    if (n * 4 > c.remaining()) throw FormatError("i2pw: truncated stream");
    r.values.resize(static_cast<std::size_t>(n));
    for (std::uint64_t k = 0; k < n; ++k) r.values[static_cast<std::size_t>(k)] = c.f32();
    const std::uint32_t stored = c.u32();
    const std::uint32_t actual = crc32(bytes.data() + start, c.pos - 4 - start, header_crc);
    if (stored != actual)
      throw CorruptionError("i2pw: checksum mismatch in tensor '" + r.name + "'");
    for (float v : r.values)
      if (!std::isfinite(v)) throw FormatError("i2pw: non-finite value in '" + r.name + "'");
    if (!seen.insert(r.name).second) throw FormatError("i2pw: duplicate tensor '" + r.name + "'");
    a.records.push_back(std::move(r));
  }
  if (c.remaining() != 0) throw FormatError("i2pw: trailing bytes");
  return a;
}

void write_archive(const WeightArchive& a, const std::string& path) {
  const std::vector<std::uint8_t> b = to_bytes(a);
  atomic_write(path, b.data(), b.size());
}

WeightArchive read_archive(const std::string& path) { return archive_from_bytes(read_file(path)); }

// --- sparse voxel tensor -----------------------------------------------------

std::vector<std::uint8_t> to_bytes(const voxel::SparseVoxelTensorF& t) {
  if (t.feats.rows() != static_cast<Eigen::Index>(t.coords.size()))
    throw InvalidInput("svt: coord/feature row mismatch");
  std::vector<std::uint8_t> b;
  b.insert(b.end(), kSvtMagic, kSvtMagic + 4);
  put_u32(b, kVersion);
  put_u32(b, static_cast<std::uint32_t>(t.coords.size()));
  put_u32(b, static_cast<std::uint32_t>(t.feats.cols()));
  put_f32(b, t.voxel_size);
  for (const Coord3& c : t.coords) {
    put_i32(b, c.x);
    put_i32(b, c.y);
    put_i32(b, c.z);
  }
  for (Eigen::Index r = 0; r < t.feats.rows(); ++r)
    for (Eigen::Index ch = 0; ch < t.feats.cols(); ++ch) put_f32(b, t.feats(r, ch));
  put_u32(b, crc32(b));
  return b;
}

voxel::SparseVoxelTensorF svt_from_bytes(const std::vector<std::uint8_t>& bytes) {
  Cursor c{bytes, 0, "svt"};
  expect_magic(c, kSvtMagic);
  if (c.u32() != kVersion) throw FormatError("svt: unsupported version");
  const std::uint64_t count = c.u32();
  const std::uint64_t width = c.u32();
  if (count > bytes.size() || width > bytes.size()) throw FormatError("svt: truncated stream");
  const std::uint64_t expect = 20 + count * 12 + count * width * 4 + 4;
  if (bytes.size() < expect) throw FormatError("svt: truncated stream");
  if (bytes.size() > expect) throw FormatError("svt: trailing bytes");
  const std::uint32_t stored = [&] {
    Cursor tail{bytes, bytes.size() - 4, "svt"};
    return tail.u32();
  }();
  if (stored != crc32(bytes.data(), bytes.size() - 4))
    throw CorruptionError("svt: checksum mismatch");

  voxel::SparseVoxelTensorF t;
  t.voxel_size = c.f32();
  if (!std::isfinite(t.voxel_size) || t.voxel_size <= 0.0f)
    throw FormatError("svt: bad voxel size");
  t.coords.resize(static_cast<std::size_t>(count));
  for (auto& cc : t.coords) {
    cc.x = c.i32();
    cc.y = c.i32();
    cc.z = c.i32();
  }
  for (std::size_t i = 1; i < t.coords.size(); ++i)
    if (!(t.coords[i - 1] < t.coords[i])) throw FormatError("svt: coords not sorted unique");
  t.feats.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(width));
  for (Eigen::Index r = 0; r < t.feats.rows(); ++r)
    for (Eigen::Index ch = 0; ch < t.feats.cols(); ++ch) {
      const float v = c.f32();
      if (!std::isfinite(v)) throw FormatError("svt: non-finite feature");
      t.feats(r, ch) = v;
    }
  return t;
}

void write_svt(const voxel::SparseVoxelTensorF& t, const std::string& path) {
  const std::vector<std::uint8_t> b = to_bytes(t);
  atomic_write(path, b.data(), b.size());
}

voxel::SparseVoxelTensorF read_svt(const std::string& path) {
  return svt_from_bytes(read_file(path));
}

// --- point-cloud text --------------------------------------------------------

void write_pointcloud(const voxel::PointCloud& pc, const std::string& path) {
  std::string out = "#cols xyz";
  if (pc.has_features()) out += " f" + std::to_string(pc.features.cols());
  if (pc.has_labels()) out += " label";
  out += "\n";
  for (Eigen::Index i = 0; i < pc.size(); ++i) {
    out += fmt_float(pc.positions(i, 0));
    out += ' ';
    out += fmt_float(pc.positions(i, 1));
    out += ' ';
    out += fmt_float(pc.positions(i, 2));
    for (Eigen::Index f = 0; f < pc.features.cols(); ++f) {
      out += ' ';
      out += fmt_float(pc.features(i, f));
    }
    if (pc.has_labels()) {
      out += ' ';
      out += std::to_string(pc.labels[static_cast<std::size_t>(i)]);
    }
    out += '\n';
  }
  atomic_write_text(path, out);
}

voxel::PointCloud pointcloud_from_string(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;

  auto where = [&](int col) {
    return origin + ":" + std::to_string(lineno) + ":" + std::to_string(col);
  };

  if (!std::getline(in, line)) throw ParseError(origin + ":1: missing header");
  ++lineno;
  std::istringstream hs(trim(line));
  std::string tok;
  hs >> tok;
  if (tok != "#cols") throw ParseError(where(1) + ": expected '#cols' header");
  hs >> tok;
  if (tok != "xyz") throw ParseError(where(2) + ": header must start with 'xyz'");
  Eigen::Index nfeat = 0;
  bool has_label = false;
  while (hs >> tok) {
    if (tok == "label" && !has_label)
      has_label = true;
    else if (tok.size() > 1 && tok[0] == 'f' && nfeat == 0 && !has_label)
      nfeat = static_cast<Eigen::Index>(parse_int_tok(tok.substr(1), where(3)));
    else
      throw ParseError(where(3) + ": bad header token '" + tok + "'");
  }
  if (nfeat < 0) throw ParseError(where(3) + ": bad feature width");

  std::vector<std::array<float, 3>> pos;
  std::vector<std::vector<float>> feats;
  std::vector<std::int32_t> labels;
  const std::size_t want = 3 + static_cast<std::size_t>(nfeat) + (has_label ? 1 : 0);

  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<std::string> toks;
    std::istringstream ls(t);
    std::string w;
    while (ls >> w) toks.push_back(w);
    if (toks.size() != want)
      throw ParseError(where(1) + ": expected " + std::to_string(want) + " columns, got " +
                       std::to_string(toks.size()));
    std::array<float, 3> p{};
    for (int k = 0; k < 3; ++k)
      p[static_cast<std::size_t>(k)] =
          static_cast<float>(parse_double_tok(toks[static_cast<std::size_t>(k)], where(k + 1)));
    pos.push_back(p);
    std::vector<float> f(static_cast<std::size_t>(nfeat));
    for (Eigen::Index k = 0; k < nfeat; ++k)
      f[static_cast<std::size_t>(k)] = static_cast<float>(
          parse_double_tok(toks[3 + static_cast<std::size_t>(k)], where(4 + int(k))));
    if (nfeat > 0) feats.push_back(std::move(f));
    if (has_label)
      labels.push_back(static_cast<std::int32_t>(
          parse_int_tok(toks[want - 1], where(static_cast<int>(want)))));
  }

  voxel::PointCloud pc;
  pc.positions.resize(static_cast<Eigen::Index>(pos.size()), 3);
  for (std::size_t i = 0; i < pos.size(); ++i)
    for (int k = 0; k < 3; ++k)
      pc.positions(static_cast<Eigen::Index>(i), k) = pos[i][static_cast<std::size_t>(k)];
  if (nfeat > 0) {
    pc.features.resize(static_cast<Eigen::Index>(feats.size()), nfeat);
    for (std::size_t i = 0; i < feats.size(); ++i)
      for (Eigen::Index k = 0; k < nfeat; ++k)
        pc.features(static_cast<Eigen::Index>(i), k) = feats[i][static_cast<std::size_t>(k)];
  }
  pc.labels = std::move(labels);
  return pc;
}

voxel::PointCloud read_pointcloud(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  return pointcloud_from_string(std::string(bytes.begin(), bytes.end()), path);
}

// --- run configuration -------------------------------------------------------

void RunConfig::set(const std::string& key, const std::string& value, const std::string& where) {
  auto dbl = [&](double lo, double hi) {
    const double v = parse_double_tok(value, where);
    if (v < lo || v >= hi) throw ParseError(where + ": '" + key + "' out of range");
    return v;
  };
  auto integer = [&](long long lo, long long hi) {
    const long long v = parse_int_tok(value, where);
    if (v < lo || v > hi) throw ParseError(where + ": '" + key + "' out of range");
    return v;
  };

  if (key == "arch")
    arch = value;
  else if (key == "regime")
    regime = value;
  else if (key == "transform")
    transform = value;
  else if (key == "data")
    data = value;
  else if (key == "out")
    out = value;
  else if (key == "schedule") {
    if (value != "cosine" && value != "poly" && value != "step")
      throw ParseError(where + ": schedule must be cosine|poly|step");
    schedule = value;
  } else if (key == "voxel_size")
    voxel_size = dbl(1e-9, 1e9);
  else if (key == "width_mult")
    width_mult = dbl(1e-9, 1e9);
  else if (key == "lr")
    lr = dbl(1e-12, 1e6);
  else if (key == "momentum")
    momentum = dbl(0.0, 1.0);
  else if (key == "weight_decay")
    weight_decay = dbl(0.0, 1e6);
  else if (key == "epochs")
    epochs = static_cast<int>(integer(1, 1000000));
  else if (key == "batch_size")
    batch_size = static_cast<int>(integer(1, 1000000));
  else if (key == "seed")
    seed = static_cast<std::uint64_t>(parse_int_tok(value, where));
  else if (key == "classes")
    classes = static_cast<int>(integer(2, 4096));
  else if (key == "subset_per_class")
    subset_per_class = static_cast<int>(integer(0, 1000000));
  else
    throw ParseError(where + ": unknown key '" + key + "'");
}

std::string RunConfig::to_text() const {
  std::map<std::string, std::string> kv;
  kv["arch"] = arch;
  kv["regime"] = regime;
  kv["transform"] = transform;
  kv["data"] = data;
  kv["out"] = out;
  kv["schedule"] = schedule;
  kv["voxel_size"] = fmt_double(voxel_size);
  kv["width_mult"] = fmt_double(width_mult);
  kv["lr"] = fmt_double(lr);
  kv["momentum"] = fmt_double(momentum);
  kv["weight_decay"] = fmt_double(weight_decay);
  kv["epochs"] = std::to_string(epochs);
  kv["batch_size"] = std::to_string(batch_size);
  kv["seed"] = std::to_string(seed);
  kv["classes"] = std::to_string(classes);
  kv["subset_per_class"] = std::to_string(subset_per_class);
  std::string out_text;
  for (const auto& [k, v] : kv) out_text += k + "=" + v + "\n";
  return out_text;
}

RunConfig config_from_string(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ParseError(where + ": expected key=value");
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)), where);
  }
  return cfg;
}

RunConfig read_config(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  return config_from_string(std::string(bytes.begin(), bytes.end()), path);
}

// --- files -------------------------------------------------------------------

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  in.seekg(0, std::ios::end);
  const std::streamoff len = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(len));
  if (len > 0) in.read(reinterpret_cast<char*>(bytes.data()), len);
  if (!in) throw InvalidInput("cannot read '" + path + "'");
  return bytes;
}

void atomic_write(const std::string& path, const std::uint8_t* data, std::size_t len) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot open '" + tmp + "' for writing");
    if (len > 0) out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(len));
    if (!out) throw InvalidInput("write failed on '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw InvalidInput("cannot rename '" + tmp + "' to '" + path + "'");
}

void atomic_write_text(const std::string& path, const std::string& text) {
  atomic_write(path, reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
}

}  // namespace i2p::io
