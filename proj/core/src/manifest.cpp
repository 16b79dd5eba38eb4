#include "psic/manifest.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>

#include "psic/error.hpp"
#include "psic/io.hpp"

namespace psic::io {
namespace {

constexpr const char* kFormat = "psic-cohort";
constexpr int kVersion = 1;

std::filesystem::path relative_to(const std::filesystem::path& p, const std::filesystem::path& base) {
  const auto abs = std::filesystem::absolute(p).lexically_normal();
  auto rel = abs.lexically_relative(std::filesystem::absolute(base).lexically_normal());
  return rel.empty() ? abs : rel;
}

}  // namespace

const char* group_name(int label) { return label == 1 ? "AD" : "CN"; }

std::vector<std::string> CohortManifest::roi_names() const {
  if (subjects.empty()) return {};
  std::vector<std::string> names;
  for (const auto& [roi, path] : subjects.front().masks) {
    const bool everywhere = std::all_of(subjects.begin(), subjects.end(),
                                        [&](const SubjectEntry& s) { return s.masks.count(roi) != 0; });
    if (everywhere) names.push_back(roi);
  }
  return names;
}

std::vector<int> CohortManifest::labels() const {
  std::vector<int> out;
  out.reserve(subjects.size());
  for (const auto& s : subjects) out.push_back(s.label);
  return out;
}

CohortManifest read_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const auto base = path.parent_path();
  CohortManifest m;
  try {
    const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
    if (j.at("format").get<std::string>() != kFormat) throw IoError("not a cohort manifest");
    if (j.at("version").get<int>() != kVersion) throw IoError("unsupported manifest version");
    std::set<std::string> ids;
    for (const auto& s : j.at("subjects")) {
      SubjectEntry e;
      e.id = s.at("id").get<std::string>();
      e.label = s.at("label").get<int>();
      if (e.label != 0 && e.label != 1) throw IoError("subject " + e.id + ": label must be 0 or 1");
      if (!ids.insert(e.id).second) throw IoError("duplicate subject id " + e.id);
      e.volume = base / s.at("volume").get<std::string>();
      for (const auto& [roi, file] : s.at("masks").items()) e.masks[roi] = base / file.get<std::string>();
      m.subjects.push_back(std::move(e));
    }
    if (j.contains("provenance")) {
      for (const auto& [k, v] : j.at("provenance").items()) m.provenance[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const CohortManifest& manifest) {
  const auto base = path.parent_path();
  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& s : manifest.subjects) {
    nlohmann::json masks = nlohmann::json::object();
    for (const auto& [roi, file] : s.masks) masks[roi] = relative_to(file, base).generic_string();
    subjects.push_back({{"id", s.id},
                        {"label", s.label},
                        {"group", group_name(s.label)},
                        {"volume", relative_to(s.volume, base).generic_string()},
                        {"masks", masks}});
  }
  nlohmann::json provenance = nlohmann::json::object();
  for (const auto& [k, v] : manifest.provenance) provenance[k] = v;
  const nlohmann::json j = {{"format", kFormat}, {"version", kVersion}, {"subjects", subjects}, {"provenance", provenance}};
  write_text_atomic(path, j.dump(2) + "\n");
}

}  // namespace psic::io
