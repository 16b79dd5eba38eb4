#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "psic/error.hpp"
#include "psic/io.hpp"
#include "psic/parallel.hpp"

namespace psic::io {
namespace {

constexpr std::array<char, 4> kMagic = {'D', 'C', 'B', '1'};

class ByteWriter {
 public:
  explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }

 private:
  void le(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t>& out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  double f64() { return std::bit_cast<double>(le(8)); }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(le(4))); }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw IoError("container truncated");
  }
  std::uint64_t le(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

struct Header {
  Dims dims{};
  std::uint32_t channels = 0;
  double b_value = 0.0;
  std::vector<sh::Vec3> gradients;
};

void write_header(ByteWriter& w, const Header& h) {
  w.raw(kMagic.data(), kMagic.size());
  w.u16(kDcbVersion);
  for (auto d : h.dims) w.u32(d);
  w.u32(h.channels);
  w.f64(h.b_value);
  for (const auto& g : h.gradients) {
    for (int i = 0; i < 3; ++i) w.f64(g[i]);
  }
}

Header read_header(ByteReader& r) {
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), kMagic.data(), 4) != 0) throw IoError("not a DCB container (bad magic)");
  const auto version = r.u16();
  if (version != kDcbVersion) throw IoError("unsupported DCB version " + std::to_string(version));
  Header h;
  for (auto& d : h.dims) d = r.u32();
  h.channels = r.u32();
  h.b_value = r.f64();
  if (h.channels == 0) throw IoError("DCB container with zero channels");
  const std::size_t table_bytes = static_cast<std::size_t>(h.channels) * 24;
  if (r.remaining() < table_bytes) throw IoError("container truncated");
  h.gradients.resize(h.channels);
  for (auto& g : h.gradients) {
    for (int i = 0; i < 3; ++i) g[i] = r.f64();
  }
  return h;
}

}  // namespace

std::size_t voxel_count(const Dims& dims) {
  return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
}

Volume::Volume(const Dims& d, std::uint32_t k)
    : dims(d), channels(k), gradients(k, sh::Vec3::Zero()), data(voxel_count(d) * k, 0.0F) {}

sh::GradientScheme Volume::scheme() const {
  if (!(b_value > 0.0)) throw DomainError("container does not hold diffusion data (b = 0)");
  return sh::GradientScheme(gradients, b_value);
}

Mask::Mask(const Dims& d) : dims(d), data(voxel_count(d), 0) {}

std::size_t Mask::count() const {
  std::size_t n = 0;
  for (auto v : data) n += v != 0 ? 1 : 0;
  return n;
}

std::vector<std::uint8_t> encode_volume(const Volume& v) {
  if (v.gradients.size() != v.channels) throw ShapeError("gradient table length differs from channel count");
  if (v.data.size() != v.voxels() * v.channels) throw ShapeError("payload length differs from header");
  std::vector<std::uint8_t> out;
  out.reserve(30 + v.channels * 24 + v.data.size() * 4);
  ByteWriter w(out);
  write_header(w, {v.dims, v.channels, v.b_value, v.gradients});
  for (float x : v.data) w.f32(x);
  return out;
}

Volume decode_volume(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  Header h = read_header(r);
  const std::size_t n = voxel_count(h.dims) * h.channels;
  if (r.remaining() != n * 4) throw IoError("payload length does not match a float32 volume");
  Volume v;
  v.dims = h.dims;
  v.channels = h.channels;
  v.b_value = h.b_value;
  v.gradients = std::move(h.gradients);
  v.data.resize(n);
  for (auto& x : v.data) x = r.f32();
  return v;
}

std::vector<std::uint8_t> encode_mask(const Mask& m) {
  if (m.data.size() != m.voxels()) throw ShapeError("mask payload length differs from header");
  std::vector<std::uint8_t> out;
  ByteWriter w(out);
  write_header(w, {m.dims, 1, 0.0, {sh::Vec3::Zero()}});
  for (auto b : m.data) w.u8(b);
  return out;
}

Mask decode_mask(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const Header h = read_header(r);
  if (h.channels != 1) throw IoError("a mask container must have one channel");
  const std::size_t n = voxel_count(h.dims);
  if (r.remaining() != n) throw IoError("payload length does not match a byte mask");
  Mask m(h.dims);
  const auto payload = r.bytes(n);
  std::copy(payload.begin(), payload.end(), m.data.begin());
  return m;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  namespace fs = std::filesystem;
  std::random_device rd;
  const auto tag = mix_seed((static_cast<std::uint64_t>(rd()) << 32) ^ rd());
  std::ostringstream name;
  name << path.filename().string() << ".tmp" << std::hex << tag;
  const fs::path tmp = path.parent_path() / name.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("write failed: " + path.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move temporary file over " + path.string());
  }
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_volume(const std::filesystem::path& path, const Volume& volume) {
  write_file_atomic(path, encode_volume(volume));
}

Volume read_volume(const std::filesystem::path& path) {
  try {
    return decode_volume(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_mask(const std::filesystem::path& path, const Mask& mask) { write_file_atomic(path, encode_mask(mask)); }

Mask read_mask(const std::filesystem::path& path) {
  try {
    return decode_mask(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_pgm(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height,
               std::span<const std::uint8_t> pixels) {
  if (pixels.size() != static_cast<std::size_t>(width) * height) throw ShapeError("PGM pixel count mismatch");
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), pixels.begin(), pixels.end());
  write_file_atomic(path, bytes);
}

}  // namespace psic::io
