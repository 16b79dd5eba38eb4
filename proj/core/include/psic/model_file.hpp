#pragma once

// Trained model file:
//
//   offset  size      field
//   0       4         magic "PSCM"
//   4       2         version (u16, currently 1)
//   6       4         header length H (u32)
//   10      H         UTF-8 JSON header: network config, parameter count,
//                     seed, SH regularization, training fingerprint
//   10+H    8         parameter count (u64)
//   18+H    8 x count parameters (f64, little-endian) in canonical order

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "psic/network.hpp"
#include "psic/training.hpp"

namespace psic::io {

inline constexpr std::uint16_t kModelVersion = 1;

struct ModelFile {
  dcnn::NetworkConfig config;
  std::uint64_t seed = 0;
  /// Regularization of the SH fit the network was trained on.
  double sh_regularization = sh::kDefaultShRegularization;
  /// Hex digest identifying the training data and settings.
  std::string fingerprint;
  std::vector<double> params;

  /// Throws ShapeError unless params.size() == param_count(config).total.
  dcnn::NetworkParams network() const;

  bool operator==(const ModelFile&) const = default;
};

std::vector<std::uint8_t> encode_model(const ModelFile& model);
ModelFile decode_model(std::span<const std::uint8_t> bytes);
void write_model(const std::filesystem::path& path, const ModelFile& model);
ModelFile read_model(const std::filesystem::path& path);

/// FNV-1a digest of the training samples, labels, subject ids and settings.
std::string training_fingerprint(const training::LabeledDcSet& set, const dcnn::NetworkConfig& net,
                                 const training::TrainingConfig& cfg);

}  // namespace psic::io
