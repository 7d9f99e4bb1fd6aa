#pragma once

#include <json.hpp>

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "serbench/augment.hpp"
#include "serbench/features.hpp"
#include "serbench/manifest.hpp"
#include "serbench/metrics.hpp"
#include "serbench/models.hpp"
#include "serbench/optim.hpp"

namespace serbench {

struct TrainConfig {
  int epochs = 20;
  double base_lr = 1e-3;
  /// Unset: step decay (0.95 per epoch) for the transformer, fixed otherwise.
  std::optional<LrSchedule> schedule;
  double clip_norm = 5.0;
  int repeats = 1;
  SpeedMode speed_mode = SpeedMode::wsola;

  LrSchedule resolved_schedule(Architecture arch) const;
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Memoized features for original and augmented records. Shared between
/// concurrent runs; every entry is a pure function of the record, so the
/// order in which runs fill the bank does not matter.
class FeatureBank {
 public:
  FeatureBank(const Manifest& originals, MelConfig mel, SpecAugPolicy specaug,
              SpeedMode speed_mode = SpeedMode::wsola);

  /// Unnormalized features of `record`, rendering its augmentation first.
  FeatureMatrix features(const ManifestRecord& record);

  Waveform waveform(const std::string& original_id);

  const MelConfig& mel() const { return mel_; }

 private:
  MelConfig mel_;
  SpecAugPolicy specaug_;
  SpeedMode speed_mode_;
  std::map<std::string, std::string> paths_;

  std::mutex mutex_;
  std::map<std::string, Waveform> waves_;
  std::map<std::string, FeatureMatrix> features_;
};

struct TrainedModel {
  Model model;
  NormStats stats;
  std::vector<double> loss_history;  // mean training loss per epoch
  std::size_t training_records = 0;
};

/// Augments `train_manifest` (training side only), standardizes features with
/// training statistics and runs Adam with batch size 1. `run_seed` controls
/// initialization and presentation order.
TrainedModel train(const ModelConfig& model_cfg, const Manifest& train_manifest,
                   const AugmentSpec& aug, const TrainConfig& cfg, FeatureBank& bank,
                   std::uint64_t run_seed, const ClassSet& classes = {});

/// Confusion matrix of `model` on `test_manifest`.
ConfusionMatrix evaluate(const Model& model, const NormStats& stats, const Manifest& test_manifest,
                         FeatureBank& bank, const ClassSet& classes = {});

nlohmann::json norm_stats_to_json(const NormStats& stats);
NormStats norm_stats_from_json(const nlohmann::json& j);

}  // namespace serbench
