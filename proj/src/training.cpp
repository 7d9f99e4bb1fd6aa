#include "serbench/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "serbench/blob_io.hpp"
#include "serbench/error.hpp"
#include "serbench/ops.hpp"
#include "serbench/rng.hpp"

namespace serbench {
namespace {

SpecAugMode parse_specaug_mode(const std::string& text) {
  if (text == "T") return SpecAugMode::time;
  if (text == "F") return SpecAugMode::freq;
  if (text == "TF") return SpecAugMode::time_freq;
  throw DataError("unknown SpecAug mode '" + text + "'");
}

std::string speed_mode_name(SpeedMode mode) { return mode == SpeedMode::wsola ? "wsola" : "resample"; }

}  // namespace

LrSchedule TrainConfig::resolved_schedule(Architecture arch) const {
  if (schedule) return *schedule;
  LrSchedule s;
  if (arch == Architecture::transformer) s.policy = LrSchedule::Policy::step_decay;
  return s;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw UsageError("training.epochs must be at least 1");
  if (repeats < 1) throw UsageError("training.repeats must be at least 1");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw UsageError("training.base_lr must be positive");
  if (!(clip_norm > 0.0)) throw UsageError("training.clip_norm must be positive");
  if (schedule && !(schedule->gamma > 0.0 && schedule->gamma <= 1.0)) {
    throw UsageError("training.schedule.gamma must lie in (0, 1]");
  }
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"epochs", epochs},
                      {"base_lr", base_lr},
                      {"clip_norm", clip_norm},
                      {"repeats", repeats},
                      {"speed_mode", speed_mode_name(speed_mode)}};
  if (schedule) {
    j["schedule"] = {{"policy", schedule->policy == LrSchedule::Policy::fixed ? "fixed" : "step_decay"},
                     {"gamma", schedule->gamma}};
  } else {
    j["schedule"] = "auto";
  }
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("training: expected an object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "epochs") c.epochs = value.get<int>();
    else if (key == "base_lr") c.base_lr = value.get<double>();
    else if (key == "clip_norm") c.clip_norm = value.get<double>();
    else if (key == "repeats") c.repeats = value.get<int>();
    else if (key == "speed_mode") {
      const auto mode = value.get<std::string>();
      if (mode == "wsola") c.speed_mode = SpeedMode::wsola;
      else if (mode == "resample") c.speed_mode = SpeedMode::resample;
      else throw UsageError("training.speed_mode: expected wsola or resample, got '" + mode + "'");
    } else if (key == "schedule") {
      if (value.is_string() && value.get<std::string>() == "auto") {
        c.schedule.reset();
        continue;
      }
      LrSchedule s;
      const nlohmann::json obj = value.is_string() ? nlohmann::json{{"policy", value}} : value;
      for (const auto& [k2, v2] : obj.items()) {
        if (k2 == "policy") {
          const auto policy = v2.get<std::string>();
          if (policy == "fixed") s.policy = LrSchedule::Policy::fixed;
          else if (policy == "step_decay") s.policy = LrSchedule::Policy::step_decay;
          else throw UsageError("training.schedule.policy: expected fixed or step_decay");
        } else if (k2 == "gamma") {
          s.gamma = v2.get<double>();
        } else {
          throw UsageError("training.schedule." + k2 + ": unknown field");
        }
      }
      c.schedule = s;
    } else {
      throw UsageError("training." + key + ": unknown field");
    }
  }
  c.validate();
  return c;
}

FeatureBank::FeatureBank(const Manifest& originals, MelConfig mel, SpecAugPolicy specaug,
                         SpeedMode speed_mode)
    : mel_(mel), specaug_(specaug), speed_mode_(speed_mode) {
  for (const auto& r : originals) {
    if (!r.is_augmented()) paths_[r.id] = r.path;
  }
}

Waveform FeatureBank::waveform(const std::string& original_id) {
  {
    std::lock_guard lock(mutex_);
    const auto it = waves_.find(original_id);
    if (it != waves_.end()) return it->second;
  }
  const auto path = paths_.find(original_id);
  if (path == paths_.end()) throw DataError("no audio registered for utterance '" + original_id + "'");
  Waveform w = load_wav(path->second);
  std::lock_guard lock(mutex_);
  return waves_.emplace(original_id, std::move(w)).first->second;
}

FeatureMatrix FeatureBank::features(const ManifestRecord& record) {
  std::string key = record.id;
  if (record.provenance) key += "@" + content_hash(to_json(record).at("provenance"));
  {
    std::lock_guard lock(mutex_);
    const auto it = features_.find(key);
    if (it != features_.end()) return it->second;
  }

  const WaveformSource source = [this](const std::string& id) { return waveform(id); };
  FeatureMatrix fm = extract(render_waveform(record, source, speed_mode_), mel_, record.id);
  if (record.provenance && record.provenance->strategy == "specaug") {
    const auto mode = parse_specaug_mode(record.provenance->params.at("mode").get<std::string>());
    fm = spec_augment(fm, mode, record.provenance->seed, specaug_);
  }

  std::lock_guard lock(mutex_);
  return features_.emplace(key, std::move(fm)).first->second;
}

TrainedModel train(const ModelConfig& model_cfg, const Manifest& train_manifest,
                   const AugmentSpec& aug, const TrainConfig& cfg, FeatureBank& bank,
                   std::uint64_t run_seed, const ClassSet& classes) {
  cfg.validate();
  if (train_manifest.empty()) throw DataError("train: empty training manifest");
  const Manifest augmented = augment_training_set(train_manifest, aug, classes);

  std::vector<FeatureMatrix> raw;
  raw.reserve(augmented.size());
  for (const auto& r : augmented) raw.push_back(bank.features(r));
  NormStats stats = compute_norm_stats(raw);

  std::vector<Matrix> inputs;
  std::vector<int> labels;
  inputs.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    inputs.push_back(normalize(raw[i], stats).values);
    labels.push_back(classes.index_of(augmented[i].label));
  }
  raw.clear();

  ModelConfig mcfg = model_cfg;
  mcfg.input_dim = bank.mel().feature_dim();
  mcfg.n_classes = classes.size();
  TrainedModel out{Model(mcfg, stream_seed(run_seed, "model", "init")), std::move(stats), {},
                   augmented.size()};

  const auto params = out.model.parameters();
  AdamState adam;
  const LrSchedule schedule = cfg.resolved_schedule(mcfg.arch);
  Rng order_rng = make_rng(stream_seed(run_seed, "train", "order"));
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(cfg.base_lr, epoch, schedule);
    std::shuffle(order.begin(), order.end(), order_rng);
    double total = 0.0;
    for (std::size_t idx : order) {
      zero_grad(params);
      Tape tape;
      const Tensor loss = cross_entropy(out.model.forward(tape, inputs[idx]), labels[idx]);
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss in epoch " + std::to_string(epoch) + " on record '" +
                           augmented[idx].id + "'");
      }
      tape.backward(loss);
      clip_grad_norm(params, cfg.clip_norm);
      adam_step(params, adam, lr);
      total += value;
    }
    out.loss_history.push_back(total / static_cast<double>(inputs.size()));
  }
  return out;
}

ConfusionMatrix evaluate(const Model& model, const NormStats& stats, const Manifest& test_manifest,
                         FeatureBank& bank, const ClassSet& classes) {
  if (test_manifest.empty()) throw DataError("evaluate: empty test manifest");
  std::vector<int> predictions;
  std::vector<int> truth;
  for (const auto& r : test_manifest) {
    predictions.push_back(model.predict(normalize(bank.features(r), stats).values));
    truth.push_back(classes.index_of(r.label));
  }
  return confusion_matrix(predictions, truth, classes.size());
}

nlohmann::json norm_stats_to_json(const NormStats& stats) {
  nlohmann::json mean = nlohmann::json::array();
  nlohmann::json stddev = nlohmann::json::array();
  for (Eigen::Index i = 0; i < stats.mean.size(); ++i) {
    mean.push_back(stats.mean[i]);
    stddev.push_back(stats.stddev[i]);
  }
  return {{"mean", mean}, {"stddev", stddev}};
}

NormStats norm_stats_from_json(const nlohmann::json& j) {
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto stddev = j.at("stddev").get<std::vector<double>>();
  if (mean.size() != stddev.size()) throw DataError("normalization stats: mean/stddev size mismatch");
  NormStats s;
  s.mean = Eigen::Map<const Eigen::RowVectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  s.stddev = Eigen::Map<const Eigen::RowVectorXd>(stddev.data(), static_cast<Eigen::Index>(stddev.size()));
  return s;
}

}  // namespace serbench
