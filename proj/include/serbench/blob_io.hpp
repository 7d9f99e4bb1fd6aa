#pragma once

#include <json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace serbench {

/// A JSON header line followed by a raw little-endian float64 payload. Used by
/// the feature cache and model checkpoints.
struct BlobFile {
  nlohmann::json header;
  std::vector<double> payload;
};

void write_blob_file(const std::filesystem::path& path, const nlohmann::json& header,
                     std::span<const double> payload);
BlobFile read_blob_file(const std::filesystem::path& path);

/// 16 hex digits of FNV-1a over the compact dump of `j` (object keys sorted).
std::string content_hash(const nlohmann::json& j);

/// Same digest over raw bytes of a file.
std::string file_hash(const std::filesystem::path& path);

}  // namespace serbench
