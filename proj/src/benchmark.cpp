#include "serbench/benchmark.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "serbench/error.hpp"
#include "serbench/rng.hpp"

namespace serbench {
namespace {

int line_at(std::string_view text, std::size_t pos) {
  int line = 1;
  for (std::size_t i = 0; i < pos && i < text.size(); ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

/// Line of the first occurrence of the quoted keys of `path`, searched in
/// sequence so nested keys resolve below their parent.
int line_of(std::string_view text, const std::vector<std::string>& path) {
  std::size_t pos = 0;
  for (const auto& key : path) {
    const auto found = text.find("\"" + key + "\"", pos);
    if (found == std::string_view::npos) break;
    pos = found;
  }
  return line_at(text, pos);
}

[[noreturn]] void field_error(std::string_view text, const std::vector<std::string>& path,
                              const std::string& message) {
  std::string dotted;
  for (const auto& p : path) dotted += (dotted.empty() ? "" : ".") + p;
  throw UsageError("config field '" + dotted + "' (line " + std::to_string(line_of(text, path)) +
                   "): " + message);
}

/// Runs a sub-parser and rethrows its errors with the offending field and line.
template <typename Fn>
auto parse_section(std::string_view text, const std::string& section, const nlohmann::json& j, Fn&& fn) {
  try {
    return fn(j);
  } catch (const std::exception& e) {
    std::vector<std::string> path{section};
    if (j.is_object()) {
      const std::string what = e.what();
      for (const auto& item : j.items()) {
        if (what.find("'" + item.key() + "'") != std::string::npos ||
            what.find("." + item.key()) != std::string::npos) {
          path.push_back(item.key());
          break;
        }
      }
    }
    field_error(text, path, e.what());
  }
}

SpecAugPolicy specaug_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("specaug: expected an object");
  SpecAugPolicy p;
  for (const auto& [key, value] : j.items()) {
    if (key == "time_mask_fraction") p.time_mask_fraction = value.get<double>();
    else if (key == "time_masks") p.time_masks = value.get<int>();
    else if (key == "freq_mask_width") p.freq_mask_width = value.get<Eigen::Index>();
    else if (key == "freq_masks") p.freq_masks = value.get<int>();
    else if (key == "warp_shift") p.warp_shift = value.get<Eigen::Index>();
    else throw UsageError("specaug: unknown field '" + key + "'");
  }
  if (p.time_mask_fraction < 0.0 || p.time_mask_fraction > 1.0 || p.time_masks < 0 ||
      p.freq_mask_width < 0 || p.freq_masks < 0 || p.warp_shift < 0) {
    throw UsageError("specaug: values must be non-negative (time_mask_fraction at most 1)");
  }
  return p;
}

nlohmann::json specaug_to_json(const SpecAugPolicy& p) {
  return {{"time_mask_fraction", p.time_mask_fraction},
          {"time_masks", p.time_masks},
          {"freq_mask_width", p.freq_mask_width},
          {"freq_masks", p.freq_masks},
          {"warp_shift", p.warp_shift}};
}

SynthConfig synth_from_json(const nlohmann::json& j, std::uint64_t default_seed) {
  if (!j.is_object()) throw UsageError("synth: expected an object");
  SynthConfig s;
  s.seed = default_seed;
  for (const auto& [key, value] : j.items()) {
    if (key == "n_per_class") s.n_per_class = value.get<int>();
    else if (key == "duration_s") s.duration_s = value.get<double>();
    else if (key == "sample_rate") s.sample_rate = value.get<double>();
    else if (key == "n_speakers") s.n_speakers = value.get<int>();
    else if (key == "seed") s.seed = value.get<std::uint64_t>();
    else throw UsageError("synth: unknown field '" + key + "'");
  }
  if (s.n_per_class < 1 || !(s.duration_s > 0.0) || !(s.sample_rate > 0.0) || s.n_speakers < 1) {
    throw UsageError("synth: n_per_class, duration_s, sample_rate and n_speakers must be positive");
  }
  return s;
}

}  // namespace

void BenchConfig::validate() const {
  if (!has_seed) throw UsageError("config: no seed given (use --seed or the 'seed' field)");
  if (manifest.empty() && !synth) throw UsageError("config: corpus needs 'manifest' or 'synth'");
  if (models.empty()) throw UsageError("config: 'models' is empty");
  if (augmentations.empty()) throw UsageError("config: 'augmentations' is empty");
  if (k < 2) throw UsageError("config: folds.k must be at least 2");
  if (group_by != "group" && group_by != "speaker") {
    throw UsageError("config: folds.group_by must be 'group' or 'speaker'");
  }
  for (int f : run_folds) {
    if (f < 0 || f >= k) throw UsageError("config: folds.run entry " + std::to_string(f) + " out of range");
  }
  std::set<std::string> names;
  for (const auto& m : models) {
    m.config.validate();
    if (!names.insert(m.name).second) throw UsageError("config: duplicate model name '" + m.name + "'");
  }
  std::set<std::string> augs;
  for (const auto& a : augmentations) {
    if (!augs.insert(a.name()).second) throw UsageError("config: duplicate augmentation '" + a.name() + "'");
  }
  training.validate();
  if (agreement_threshold && (*agreement_threshold < 0.0 || *agreement_threshold > 1.0)) {
    throw UsageError("config: agreement_threshold must lie in [0, 1]");
  }
  if (classes.size() < 2) throw UsageError("config: at least two classes are required");
}

nlohmann::json BenchConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  if (synth) {
    j["corpus"] = {{"synth",
                    {{"n_per_class", synth->n_per_class},
                     {"duration_s", synth->duration_s},
                     {"sample_rate", synth->sample_rate},
                     {"n_speakers", synth->n_speakers},
                     {"seed", synth->seed}}}};
  } else {
    j["corpus"] = {{"manifest", manifest.string()}};
  }
  nlohmann::json ms = nlohmann::json::array();
  for (const auto& m : models) {
    nlohmann::json mj = m.config.to_json();
    mj["name"] = m.name;
    ms.push_back(mj);
  }
  j["models"] = ms;
  nlohmann::json as = nlohmann::json::array();
  for (const auto& a : augmentations) as.push_back(a.name());
  j["augmentations"] = as;
  j["folds"] = {{"k", k},
                {"constraint", constraint == FoldConstraint::none ? "none" : "pair_by_gender"},
                {"group_by", group_by},
                {"run", run_folds}};
  j["training"] = training.to_json();
  j["features"] = features.to_json();
  j["specaug"] = specaug_to_json(specaug);
  if (agreement_threshold) j["agreement_threshold"] = *agreement_threshold;
  j["classes"] = classes.labels;
  return j;
}

BenchConfig BenchConfig::parse(std::string_view text, const std::filesystem::path& base_dir) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config: JSON syntax error at line " + std::to_string(line_at(text, e.byte)) + ": " +
                     e.what());
  }
  if (!root.is_object()) throw UsageError("config: top level must be an object");

  BenchConfig cfg;
  bool models_given = false;
  bool augs_given = false;
  for (const auto& [key, value] : root.items()) {
    try {
      if (key == "seed") {
        if (value.is_string() && value.get<std::string>() == "auto") continue;
        cfg.seed = value.get<std::uint64_t>();
        cfg.has_seed = true;
      } else if (key == "corpus") {
        if (!value.is_object()) field_error(text, {key}, "expected an object");
        for (const auto& [ck, cv] : value.items()) {
          if (ck == "manifest") {
            std::filesystem::path p = cv.get<std::string>();
            cfg.manifest = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
          } else if (ck == "synth") {
            cfg.synth = parse_section(text, "synth", cv,
                                      [&](const nlohmann::json& s) { return synth_from_json(s, 0); });
          } else {
            field_error(text, {key, ck}, "unknown field");
          }
        }
      } else if (key == "models") {
        models_given = true;
        if (!value.is_array()) field_error(text, {key}, "expected an array");
        for (const auto& mv : value) {
          ModelEntry entry;
          nlohmann::json spec = mv;
          if (spec.is_object() && spec.contains("name")) {
            entry.name = spec.at("name").get<std::string>();
            spec.erase("name");
          }
          entry.config = parse_section(text, "models", spec,
                                       [](const nlohmann::json& s) { return ModelConfig::from_json(s); });
          if (entry.name.empty()) entry.name = std::string(display_name(entry.config.arch));
          cfg.models.push_back(std::move(entry));
        }
      } else if (key == "augmentations") {
        augs_given = true;
        if (value.is_string() && value.get<std::string>() == "standard") {
          cfg.augmentations = standard_augmentation_grid();
        } else if (value.is_array()) {
          for (const auto& av : value) {
            try {
              cfg.augmentations.push_back(AugmentSpec::parse(av.get<std::string>()));
            } catch (const std::exception& e) {
              field_error(text, {key}, e.what());
            }
          }
        } else {
          field_error(text, {key}, "expected \"standard\" or an array of condition names");
        }
      } else if (key == "folds") {
        if (!value.is_object()) field_error(text, {key}, "expected an object");
        for (const auto& [fk, fv] : value.items()) {
          if (fk == "k") {
            cfg.k = fv.get<int>();
          } else if (fk == "constraint") {
            const auto c = fv.get<std::string>();
            if (c == "none") cfg.constraint = FoldConstraint::none;
            else if (c == "pair_by_gender") cfg.constraint = FoldConstraint::pair_by_gender;
            else field_error(text, {key, fk}, "expected none or pair_by_gender");
          } else if (fk == "group_by") {
            cfg.group_by = fv.get<std::string>();
            if (cfg.group_by != "group" && cfg.group_by != "speaker") {
              field_error(text, {key, fk}, "expected group or speaker");
            }
          } else if (fk == "run") {
            cfg.run_folds = fv.get<std::vector<int>>();
          } else {
            field_error(text, {key, fk}, "unknown field");
          }
        }
      } else if (key == "training") {
        cfg.training = parse_section(text, key, value,
                                     [](const nlohmann::json& s) { return TrainConfig::from_json(s); });
      } else if (key == "features") {
        cfg.features = parse_section(text, key, value,
                                     [](const nlohmann::json& s) { return MelConfig::from_json(s); });
      } else if (key == "specaug") {
        cfg.specaug = parse_section(text, key, value, specaug_from_json);
      } else if (key == "agreement_threshold") {
        cfg.agreement_threshold = value.get<double>();
      } else if (key == "classes") {
        cfg.classes.labels = value.get<std::vector<std::string>>();
      } else {
        field_error(text, {key}, "unknown field");
      }
    } catch (const nlohmann::json::exception& e) {
      field_error(text, {key}, std::string("wrong type: ") + e.what());
    }
  }

  if (cfg.synth && !root.at("corpus").at("synth").contains("seed")) {
    cfg.synth->seed = cfg.seed;
  }
  if (!models_given) {
    for (auto arch : {Architecture::gated_cnn, Architecture::mlp_mixer, Architecture::bilstm,
                      Architecture::transformer}) {
      cfg.models.push_back({std::string(display_name(arch)), ModelConfig::defaults(arch)});
    }
  }
  if (!augs_given) cfg.augmentations = standard_augmentation_grid();
  for (auto& a : cfg.augmentations) a.seed = cfg.seed;
  return cfg;
}

BenchConfig BenchConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.parent_path());
}

double sample_std(const std::vector<double>& values, double mean) {
  if (values.size() < 2) return 0.0;
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return std::sqrt(sq / static_cast<double>(values.size() - 1));
}

CellSummary summarize_cell(const std::vector<const RunResult*>& runs) {
  CellSummary s;
  if (runs.empty()) return s;
  s.model = runs.front()->model;
  s.augmentation = runs.front()->augmentation;
  s.runs = static_cast<int>(runs.size());
  std::vector<double> ua;
  std::vector<double> f1;
  for (const RunResult* r : runs) {
    if (!r->ok()) {
      ++s.failed;
      continue;
    }
    ua.push_back(r->ua);
    f1.push_back(r->weighted_f1);
    if (s.confusion.size() == 0) s.confusion = r->confusion;
    else s.confusion += r->confusion;
  }
  if (ua.empty()) {
    s.ua_mean = s.ua_std = s.f1_mean = s.f1_std = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  double ua_sum = 0.0;
  double f1_sum = 0.0;
  for (std::size_t i = 0; i < ua.size(); ++i) {
    ua_sum += ua[i];
    f1_sum += f1[i];
  }
  s.ua_mean = ua_sum / static_cast<double>(ua.size());
  s.f1_mean = f1_sum / static_cast<double>(f1.size());
  s.ua_std = sample_std(ua, s.ua_mean);
  s.f1_std = sample_std(f1, s.f1_mean);
  return s;
}

std::vector<CellSummary> EvalReport::cells() const {
  std::vector<CellSummary> out;
  for (const auto& m : models) {
    for (const auto& a : augmentations) {
      std::vector<const RunResult*> cell;
      for (const auto& r : runs) {
        if (r.model == m && r.augmentation == a) cell.push_back(&r);
      }
      CellSummary s = summarize_cell(cell);
      s.model = m;
      s.augmentation = a;
      out.push_back(std::move(s));
    }
  }
  return out;
}

EvalReport EvalReport::from_runs(std::vector<RunResult> runs, std::vector<std::string> class_labels) {
  EvalReport report;
  report.class_labels = std::move(class_labels);
  std::set<std::string> seen_models;
  std::set<std::string> seen_augs;
  for (const auto& r : runs) {
    if (seen_models.insert(r.model).second) report.models.push_back(r.model);
    if (seen_augs.insert(r.augmentation).second) report.augmentations.push_back(r.augmentation);
  }
  report.runs = std::move(runs);
  return report;
}

std::uint64_t run_seed(std::uint64_t global_seed, std::string_view model, std::string_view augmentation,
                       int fold, int repeat) {
  const std::string key = std::string(model) + "/" + std::string(augmentation);
  return stream_seed(global_seed, key, "fold" + std::to_string(fold) + "/repeat" + std::to_string(repeat));
}

Manifest prepare_corpus(const BenchConfig& cfg, const std::filesystem::path& work_dir) {
  Manifest corpus;
  if (cfg.synth) {
    const auto dir = work_dir / "corpus";
    synth_corpus(*cfg.synth, dir);
    corpus = read_manifest(dir / "manifest.jsonl");
  } else {
    corpus = read_manifest(cfg.manifest);
  }
  if (cfg.agreement_threshold) corpus = filter_by_agreement(corpus, *cfg.agreement_threshold);
  if (corpus.empty()) throw DataError("corpus is empty after filtering");
  for (const auto& r : corpus) {
    if (r.is_augmented()) throw DataError("corpus record '" + r.id + "' is already augmented");
  }
  validate_manifest(corpus, cfg.classes);
  if (cfg.group_by == "speaker") {
    for (auto& r : corpus) r.group = r.speaker;
  }
  return corpus;
}

RunResult run_single(const BenchConfig& cfg, const Manifest& corpus, const FoldPlan& plan,
                     const ModelEntry& model, const AugmentSpec& aug, int fold, int repeat,
                     FeatureBank& bank, TrainedModel* trained) {
  RunResult result;
  result.model = model.name;
  result.augmentation = aug.name();
  result.fold = fold;
  result.repeat = repeat;

  auto [train_set, test_set] = split_fold(corpus, plan, fold);
  AugmentSpec spec = aug;
  spec.seed = cfg.seed;
  check_no_leakage(augment_training_set(train_set, spec, cfg.classes), test_set);

  TrainedModel tm = train(model.config, train_set, spec, cfg.training, bank,
                          run_seed(cfg.seed, model.name, result.augmentation, fold, repeat), cfg.classes);
  result.confusion = evaluate(tm.model, tm.stats, test_set, bank, cfg.classes);
  result.ua = uar(result.confusion);
  result.weighted_f1 = weighted_f1(result.confusion);
  if (trained != nullptr) *trained = std::move(tm);
  return result;
}

EvalReport run_benchmark(const BenchConfig& cfg, const std::filesystem::path& work_dir, int jobs) {
  cfg.validate();
  if (jobs < 1) throw UsageError("jobs must be at least 1");
  const Manifest corpus = prepare_corpus(cfg, work_dir);
  const FoldPlan plan = make_folds(corpus, cfg.k, cfg.constraint, cfg.seed);
  FeatureBank bank(corpus, cfg.features, cfg.specaug, cfg.training.speed_mode);

  std::vector<int> folds = cfg.run_folds;
  if (folds.empty()) {
    for (int f = 0; f < cfg.k; ++f) folds.push_back(f);
  }

  struct Task {
    const ModelEntry* model;
    const AugmentSpec* aug;
    int fold;
    int repeat;
  };
  std::vector<Task> tasks;
  for (const auto& m : cfg.models) {
    for (const auto& a : cfg.augmentations) {
      for (int f : folds) {
        for (int r = 0; r < cfg.training.repeats; ++r) tasks.push_back({&m, &a, f, r});
      }
    }
  }

  std::vector<RunResult> results(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const Task& t = tasks[i];
      RunResult& out = results[i];
      try {
        out = run_single(cfg, corpus, plan, *t.model, *t.aug, t.fold, t.repeat, bank);
      } catch (const std::exception& e) {
        out.model = t.model->name;
        out.augmentation = t.aug->name();
        out.fold = t.fold;
        out.repeat = t.repeat;
        out.ua = out.weighted_f1 = std::numeric_limits<double>::quiet_NaN();
        out.error = e.what();
        if (out.error.empty()) out.error = "unknown failure";
      }
      std::lock_guard lock(log_mutex);
      std::clog << "[bench] " << (i + 1) << "/" << tasks.size() << " " << out.model << " "
                << out.augmentation << " fold " << out.fold << " repeat " << out.repeat;
      if (out.ok()) std::clog << " ua=" << out.ua << " wf1=" << out.weighted_f1 << "\n";
      else std::clog << " FAILED: " << out.error << "\n";
    }
  };
  const int n_threads = std::min<int>(jobs, static_cast<int>(std::max<std::size_t>(tasks.size(), 1)));
  {
    std::vector<std::jthread> pool;
    for (int i = 1; i < n_threads; ++i) pool.emplace_back(worker);
    worker();
  }

  EvalReport report;
  for (const auto& m : cfg.models) report.models.push_back(m.name);
  for (const auto& a : cfg.augmentations) report.augmentations.push_back(a.name());
  report.class_labels = cfg.classes.labels;
  report.runs = std::move(results);
  return report;
}

}  // namespace serbench
