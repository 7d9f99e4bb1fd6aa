#include "serbench/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>

#include "serbench/error.hpp"

namespace serbench {

int ClassSet::index_of(std::string_view label) const {
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw DataError("unknown label '" + std::string(label) + "'");
  return static_cast<int>(it - labels.begin());
}

bool ClassSet::contains(std::string_view label) const {
  return std::find(labels.begin(), labels.end(), label) != labels.end();
}

nlohmann::json to_json(const ManifestRecord& record) {
  nlohmann::json j;
  j["id"] = record.id;
  j["path"] = record.path;
  j["label"] = record.label;
  j["speaker"] = record.speaker;
  j["group"] = record.group;
  if (record.gender) j["gender"] = std::string(1, *record.gender);
  if (record.rater_agreement) j["rater_agreement"] = *record.rater_agreement;
  if (record.provenance) {
    const Provenance& p = *record.provenance;
    nlohmann::json pj;
    pj["strategy"] = p.strategy;
    pj["source_ids"] = p.source_ids;
    pj["params"] = p.params;
    pj["seed"] = p.seed;
    if (!p.out_path.empty()) pj["out_path"] = p.out_path;
    j["provenance"] = std::move(pj);
  }
  return j;
}

ManifestRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("manifest record must be a JSON object");
  const auto required = [&](const char* key) -> std::string {
    if (!j.contains(key) || !j[key].is_string()) {
      throw DataError(std::string("manifest record: missing string field '") + key + "'");
    }
    return j[key].get<std::string>();
  };
  ManifestRecord r;
  r.id = required("id");
  r.label = required("label");
  r.path = j.value("path", std::string{});
  r.speaker = j.value("speaker", std::string{});
  r.group = j.value("group", r.speaker);
  if (j.contains("gender") && !j["gender"].is_null()) {
    const auto g = j["gender"].get<std::string>();
    if (g != "M" && g != "F") throw DataError("manifest record '" + r.id + "': gender must be M or F");
    r.gender = g[0];
  }
  if (j.contains("rater_agreement") && !j["rater_agreement"].is_null()) {
    const double a = j["rater_agreement"].get<double>();
    if (a < 0.0 || a > 1.0) {
      throw DataError("manifest record '" + r.id + "': rater_agreement outside [0, 1]");
    }
    r.rater_agreement = a;
  }
  if (j.contains("provenance") && !j["provenance"].is_null()) {
    const auto& pj = j["provenance"];
    Provenance p;
    p.strategy = pj.at("strategy").get<std::string>();
    p.source_ids = pj.at("source_ids").get<std::vector<std::string>>();
    p.params = pj.value("params", nlohmann::json::object());
    p.seed = pj.value("seed", std::uint64_t{0});
    p.out_path = pj.value("out_path", std::string{});
    r.provenance = std::move(p);
  }
  return r;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  Manifest manifest;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      ManifestRecord r = record_from_json(nlohmann::json::parse(line));
      if (!r.path.empty() && std::filesystem::path(r.path).is_relative()) {
        r.path = (base / r.path).lexically_normal().string();
      }
      manifest.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const auto& r : manifest) out << to_json(r).dump() << '\n';
}

void validate_manifest(const Manifest& manifest, const ClassSet& classes) {
  std::set<std::string> ids;
  for (const auto& r : manifest) {
    if (!ids.insert(r.id).second) throw DataError("duplicate manifest id '" + r.id + "'");
    if (!classes.contains(r.label)) {
      throw DataError("record '" + r.id + "' has label '" + r.label + "' outside the class set");
    }
  }
}

std::vector<int> class_histogram(const Manifest& manifest, const ClassSet& classes) {
  std::vector<int> counts(classes.labels.size(), 0);
  for (const auto& r : manifest) ++counts[static_cast<std::size_t>(classes.index_of(r.label))];
  return counts;
}

std::vector<std::string> source_closure(const ManifestRecord& record) {
  if (!record.provenance) return {record.id};
  return record.provenance->source_ids;
}

Manifest filter_by_agreement(const Manifest& manifest, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw UsageError("agreement threshold must lie in [0, 1]");
  }
  Manifest kept;
  std::size_t unrated = 0;
  for (const auto& r : manifest) {
    if (!r.rater_agreement) {
      ++unrated;
      kept.push_back(r);
    } else if (*r.rater_agreement >= threshold) {
      kept.push_back(r);
    }
  }
  if (unrated > 0) {
    std::clog << "filter_by_agreement: " << unrated << " record(s) without rater agreement kept\n";
  }
  return kept;
}

}  // namespace serbench
