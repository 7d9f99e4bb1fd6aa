#include "serbench/blob_io.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "serbench/error.hpp"
#include "serbench/rng.hpp"

namespace serbench {
namespace {

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t out = 0;
  for (int i = 0; i < 8; ++i) out |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
  return out;
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

void write_blob_file(const std::filesystem::path& path, const nlohmann::json& header,
                     std::span<const double> payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  nlohmann::json h = header;
  h["payload_doubles"] = payload.size();
  out << h.dump() << '\n';
  for (double v : payload) {
    const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  if (!out) throw DataError("write failed for " + path.string());
}

BlobFile read_blob_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string header_line;
  if (!std::getline(in, header_line)) throw DataError(path.string() + ": missing header");
  BlobFile blob;
  try {
    blob.header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed header: " + e.what());
  }
  const auto n = blob.header.value("payload_doubles", std::size_t{0});
  blob.payload.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) {
      throw DataError(path.string() + ": truncated payload");
    }
    blob.payload[i] = std::bit_cast<double>(to_little_endian(bits));
  }
  blob.header.erase("payload_doubles");
  return blob;
}

std::string content_hash(const nlohmann::json& j) { return hex64(fnv1a64(j.dump())); }

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(fnv1a64(bytes));
}

}  // namespace serbench
