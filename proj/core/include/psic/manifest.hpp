#pragma once

// Cohort manifest (JSON):
//
//   {"format": "psic-cohort", "version": 1,
//    "subjects": [{"id": "...", "label": 0|1, "group": "CN"|"AD",
//                  "volume": "file.dcb", "masks": {"<roi>": "mask.dcb"}}],
//    "provenance": {"<key>": "<value>"}}
//
// File paths are relative to the manifest's directory.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace psic::io {

struct SubjectEntry {
  std::string id;
  int label = 0;  ///< 0 = CN, 1 = AD
  std::filesystem::path volume;
  std::map<std::string, std::filesystem::path> masks;

  bool operator==(const SubjectEntry&) const = default;
};

struct CohortManifest {
  std::vector<SubjectEntry> subjects;
  std::map<std::string, std::string> provenance;

  /// ROI names present for every subject, sorted.
  std::vector<std::string> roi_names() const;
  std::vector<int> labels() const;

  bool operator==(const CohortManifest&) const = default;
};

const char* group_name(int label);

/// Paths in the returned manifest are resolved against the manifest's
/// directory. Throws IoError on malformed content.
CohortManifest read_manifest(const std::filesystem::path& path);
/// Paths are stored relative to the manifest's directory when possible.
void write_manifest(const std::filesystem::path& path, const CohortManifest& manifest);

}  // namespace psic::io
