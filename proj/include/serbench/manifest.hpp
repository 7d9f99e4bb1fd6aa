#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace serbench {

inline constexpr std::string_view kNeutralLabel = "neutral";

/// Ordered label names; a label's position is its class index.
struct ClassSet {
  std::vector<std::string> labels{"neutral", "angry", "sad", "happy"};

  int size() const { return static_cast<int>(labels.size()); }
  int index_of(std::string_view label) const;  // throws DataError when unknown
  bool contains(std::string_view label) const;
};

/// How an augmented record was derived from original utterances.
struct Provenance {
  std::string strategy;                 // noise | speed | specaug | copy_paste
  std::vector<std::string> source_ids;  // original ids, in concatenation order
  nlohmann::json params = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::string out_path;  // set when the waveform was materialized to a cache
};

struct ManifestRecord {
  std::string id;
  std::string path;
  std::string label;
  std::string speaker;
  std::string group;
  std::optional<char> gender;  // 'M' or 'F'
  std::optional<double> rater_agreement;
  std::optional<Provenance> provenance;

  bool is_augmented() const { return provenance.has_value(); }
};

using Manifest = std::vector<ManifestRecord>;

nlohmann::json to_json(const ManifestRecord& record);
ManifestRecord record_from_json(const nlohmann::json& j);

/// Reads JSONL. Relative `path` fields are resolved against the manifest's
/// directory. Throws DataError naming the offending line.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Throws DataError on duplicate ids or labels outside `classes`.
void validate_manifest(const Manifest& manifest, const ClassSet& classes = {});

/// Per-class record counts, indexed like `classes`.
std::vector<int> class_histogram(const Manifest& manifest, const ClassSet& classes = {});

/// Original utterance ids a record derives from (itself for originals).
std::vector<std::string> source_closure(const ManifestRecord& record);

/// Keeps records whose rater agreement is at least `threshold`; records
/// without an agreement value are kept.
Manifest filter_by_agreement(const Manifest& manifest, double threshold);

}  // namespace serbench
