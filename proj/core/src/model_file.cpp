#include "psic/model_file.hpp"

#include <bit>
#include <cstdio>
#include <cstring>

#include "json_config.hpp"
#include "psic/error.hpp"
#include "psic/io.hpp"

namespace psic::io {
namespace {

constexpr std::array<char, 4> kMagic = {'P', 'S', 'C', 'M'};

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t& pos, int bytes) {
  if (in.size() - pos < static_cast<std::size_t>(bytes)) throw IoError("model file truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  pos += static_cast<std::size_t>(bytes);
  return v;
}

class Fnv1a {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= b[i];
      h_ *= 1099511628211ULL;
    }
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      const auto b = static_cast<std::uint8_t>(v >> (8 * i));
      bytes(&b, 1);
    }
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 14695981039346656037ULL;
};

}  // namespace

dcnn::NetworkParams ModelFile::network() const { return dcnn::NetworkParams(config, params); }

std::vector<std::uint8_t> encode_model(const ModelFile& model) {
  const std::size_t expected = dcnn::param_count(model.config).total;
  if (model.params.size() != expected) throw ShapeError("parameter count does not match the network config");
  const nlohmann::json header = {{"config", detail::to_json(model.config)},
                                 {"param_count", expected},
                                 {"seed", model.seed},
                                 {"sh_regularization", model.sh_regularization},
                                 {"fingerprint", model.fingerprint}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  put_le(out, kModelVersion, 2);
  put_le(out, text.size(), 4);
  out.insert(out.end(), text.begin(), text.end());
  put_le(out, model.params.size(), 8);
  for (double v : model.params) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  return out;
}

ModelFile decode_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic.data(), 4) != 0) {
    throw IoError("not a model file (bad magic)");
  }
  std::size_t pos = 4;
  const auto version = get_le(bytes, pos, 2);
  if (version != kModelVersion) throw IoError("unsupported model file version " + std::to_string(version));
  const auto header_len = static_cast<std::size_t>(get_le(bytes, pos, 4));
  if (bytes.size() - pos < header_len) throw IoError("model file truncated");
  const std::string text(reinterpret_cast<const char*>(bytes.data() + pos), header_len);
  pos += header_len;

  ModelFile model;
  std::size_t declared = 0;
  try {
    const auto header = nlohmann::json::parse(text);
    model.config = detail::network_config_from_json(header.at("config"));
    declared = header.at("param_count").get<std::size_t>();
    model.seed = header.at("seed").get<std::uint64_t>();
    model.sh_regularization = header.at("sh_regularization").get<double>();
    model.fingerprint = header.at("fingerprint").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("model header: ") + e.what());
  }
  const auto count = static_cast<std::size_t>(get_le(bytes, pos, 8));
  if (count != declared || count != dcnn::param_count(model.config).total) {
    throw IoError("model parameter count does not match its config");
  }
  if (bytes.size() - pos != count * 8) throw IoError("model payload length does not match its header");
  model.params.resize(count);
  for (auto& v : model.params) v = std::bit_cast<double>(get_le(bytes, pos, 8));
  return model;
}

void write_model(const std::filesystem::path& path, const ModelFile& model) {
  write_file_atomic(path, encode_model(model));
}

ModelFile read_model(const std::filesystem::path& path) {
  try {
    return decode_model(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string training_fingerprint(const training::LabeledDcSet& set, const dcnn::NetworkConfig& net,
                                 const training::TrainingConfig& cfg) {
  Fnv1a h;
  h.str(detail::to_json(net).dump());
  h.str(detail::to_json(cfg).dump());
  h.u64(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    h.u64(static_cast<std::uint64_t>(set.labels[i]));
    h.str(set.subject_ids[i]);
    for (double v : set.samples[i].data) h.f64(v);
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h.value()));
  return buf;
}

}  // namespace psic::io
