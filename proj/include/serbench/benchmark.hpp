#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "serbench/augment.hpp"
#include "serbench/features.hpp"
#include "serbench/folds.hpp"
#include "serbench/metrics.hpp"
#include "serbench/models.hpp"
#include "serbench/synth.hpp"
#include "serbench/training.hpp"

namespace serbench {

struct ModelEntry {
  std::string name;  // row label; defaults to the architecture's display name
  ModelConfig config;
};

/// Declarative benchmark description, normally read from one JSON document.
struct BenchConfig {
  std::uint64_t seed = 0;
  bool has_seed = false;

  std::filesystem::path manifest;       // corpus manifest (JSONL)
  std::optional<SynthConfig> synth;     // generate a synthetic corpus instead

  std::vector<ModelEntry> models;
  std::vector<AugmentSpec> augmentations;

  int k = 5;
  FoldConstraint constraint = FoldConstraint::none;
  std::string group_by = "group";       // group | speaker
  std::vector<int> run_folds;           // empty: every fold

  TrainConfig training;
  MelConfig features;
  SpecAugPolicy specaug;
  std::optional<double> agreement_threshold;
  ClassSet classes;

  void validate() const;
  nlohmann::json to_json() const;

  /// `text` is the whole document; errors name the field and its line.
  /// Relative paths resolve against `base_dir`.
  static BenchConfig parse(std::string_view text, const std::filesystem::path& base_dir = {});
  static BenchConfig load(const std::filesystem::path& path);
};

/// Metrics of one (model, augmentation, fold, repeat) run. A failed run keeps
/// its error message and NaN metrics.
struct RunResult {
  std::string model;
  std::string augmentation;
  int fold = 0;
  int repeat = 0;
  double ua = 0.0;
  double weighted_f1 = 0.0;
  ConfusionMatrix confusion;
  std::string error;

  bool ok() const { return error.empty(); }
};

/// mean and sample standard deviation (n - 1) over the successful runs.
struct CellSummary {
  std::string model;
  std::string augmentation;
  int runs = 0;
  int failed = 0;
  double ua_mean = 0.0;
  double ua_std = 0.0;
  double f1_mean = 0.0;
  double f1_std = 0.0;
  ConfusionMatrix confusion;  // summed over successful runs
};

struct EvalReport {
  std::vector<std::string> models;         // row order
  std::vector<std::string> augmentations;  // column order
  std::vector<std::string> class_labels;
  std::vector<RunResult> runs;             // model-major, then augmentation, fold, repeat

  std::vector<CellSummary> cells() const;
  /// Rebuilds row/column order from the order of first appearance in `runs`.
  static EvalReport from_runs(std::vector<RunResult> runs, std::vector<std::string> class_labels);
};

CellSummary summarize_cell(const std::vector<const RunResult*>& runs);

/// Sample standard deviation; 0 for fewer than two values.
double sample_std(const std::vector<double>& values, double mean);

/// Seed of one run; identical for bench cells and standalone train/evaluate.
std::uint64_t run_seed(std::uint64_t global_seed, std::string_view model, std::string_view augmentation,
                       int fold, int repeat);

/// Reads (or generates) the corpus, applies rater filtering, validates it and
/// sets each record's group according to `group_by`.
Manifest prepare_corpus(const BenchConfig& cfg, const std::filesystem::path& work_dir);

/// Trains on every fold except `fold` and evaluates on `fold`. Throws on
/// failure; run_benchmark records the message instead.
RunResult run_single(const BenchConfig& cfg, const Manifest& corpus, const FoldPlan& plan,
                     const ModelEntry& model, const AugmentSpec& aug, int fold, int repeat,
                     FeatureBank& bank, TrainedModel* trained = nullptr);

/// Executes the whole grid with `jobs` worker threads. Results are identical
/// for any number of jobs.
EvalReport run_benchmark(const BenchConfig& cfg, const std::filesystem::path& work_dir, int jobs = 1);

}  // namespace serbench
