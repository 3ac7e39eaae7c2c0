#include "sbr/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sbr/errors.hpp"

namespace sbr {

namespace {

void PutLittleEndian(std::string& out, double v) {
  uint64_t bits = std::bit_cast<uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xFF));
    bits >>= 8;
  }
}

double GetLittleEndian(const unsigned char* p) {
  uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<double>(bits);
}

}  // namespace

const Tensor* ParameterArchive::Find(const std::string& name) const {
  for (const auto& [n, t] : arrays) {
    if (n == name) return &t;
  }
  return nullptr;
}

void ParameterArchive::Save(const std::filesystem::path& path) const {
  nlohmann::json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["metadata"] = metadata;
  nlohmann::json entries = nlohmann::json::array();
  std::string blob;
  for (const auto& [name, tensor] : arrays) {
    entries.push_back({{"name", name},
                       {"shape", {tensor.rows(), tensor.cols()}},
                       {"offset", blob.size()}});
    for (double v : tensor.values()) PutLittleEndian(blob, v);
  }
  manifest["entries"] = std::move(entries);
  manifest["blob_bytes"] = blob.size();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open checkpoint for writing: " + path.string());
  out << manifest.dump() << '\n';
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw Error("failed writing checkpoint: " + path.string());
}

ParameterArchive ParameterArchive::Load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open checkpoint");
  std::string header;
  if (!std::getline(in, header)) throw ParseError(path.string() + ": empty checkpoint");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(header);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": line 1, byte " + std::to_string(e.byte) +
                     ": malformed checkpoint manifest");
  }
  const std::string format = manifest.value("format", "");
  if (format != kCheckpointFormat) {
    throw FormatVersionError(path.string() + ": expected format " + kCheckpointFormat +
                             ", found '" + format + "'");
  }

  std::ostringstream rest;
  rest << in.rdbuf();
  const std::string blob = rest.str();

  ParameterArchive archive;
  try {
    archive.metadata = manifest.at("metadata");
    const size_t blob_bytes = manifest.at("blob_bytes").get<size_t>();
    if (blob.size() != blob_bytes) {
      throw ParseError(path.string() + ": blob holds " + std::to_string(blob.size()) +
                       " bytes, manifest declares " + std::to_string(blob_bytes));
    }
    for (const auto& entry : manifest.at("entries")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<size_t>>();
      const size_t offset = entry.at("offset").get<size_t>();
      if (shape.size() != 2) throw ParseError(path.string() + ": entry " + name + " is not 2-D");
      const size_t count = shape[0] * shape[1];
      if (offset + count * 8 > blob.size()) {
        throw ParseError(path.string() + ": entry " + name + " runs past the blob");
      }
      Tensor t(shape[0], shape[1]);
      const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data()) + offset;
      for (size_t i = 0; i < count; ++i) t.data()[i] = GetLittleEndian(bytes + 8 * i);
      archive.arrays.emplace_back(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": invalid checkpoint manifest: " + e.what());
  }
  return archive;
}

}  // namespace sbr
