#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sbr/tensor.hpp"

namespace sbr {

inline constexpr const char* kCheckpointFormat = "sbr-ckpt-v1";

// Named, shaped float64 arrays plus free-form metadata.
//
// On disk: one JSON manifest line
//   {"format":"sbr-ckpt-v1","metadata":{...},"blob_bytes":B,
//    "entries":[{"name":..,"shape":[r,c],"offset":bytes},...]}
// followed by '\n' and a B-byte little-endian float64 blob.
struct ParameterArchive {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> arrays;

  const Tensor* Find(const std::string& name) const;

  void Save(const std::filesystem::path& path) const;
  // Throws ParseError on malformed/truncated files and FormatVersionError
  // on a foreign format tag.
  static ParameterArchive Load(const std::filesystem::path& path);
};

}  // namespace sbr
