#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "serbench/audio.hpp"
#include "serbench/manifest.hpp"

namespace serbench {

enum class AugmentKind { none, noise, spec_aug, speed, copy_paste };
enum class SpecAugMode { time, freq, time_freq };

/// One augmentation condition, e.g. Noise(20db) or Speed(M).
struct AugmentSpec {
  AugmentKind kind = AugmentKind::none;
  double snr_db = 20.0;
  SpecAugMode mode = SpecAugMode::time_freq;
  std::vector<double> speed_factors{0.9};  // Speed(M) holds {0.9, 1.1}
  std::uint64_t seed = 0;

  /// Canonical column name: NoAug, Noise(10db), SpecAug(TF), Speed(0.9),
  /// Speed(M), CopyPaste.
  std::string name() const;

  /// Parses canonical names (case-insensitive; "Noise(20)" and "Speed(mixed)"
  /// are accepted too). Throws UsageError listing valid names.
  static AugmentSpec parse(std::string_view text);
};

std::string_view to_string(SpecAugMode mode);

/// The eleven conditions of the published grid, NoAug through CopyPaste.
std::vector<AugmentSpec> standard_augmentation_grid();

/// Speed perturbation backend: pitch-preserving WSOLA or plain resampling.
enum class SpeedMode { wsola, resample };

/// Adds white Gaussian noise at `snr_db` relative to the signal's mean power.
/// The drawn noise is scaled so its empirical power hits the target exactly.
Waveform add_noise(const Waveform& w, double snr_db, std::uint64_t seed);

/// WSOLA time stretching: output length round(N / factor), pitch unchanged.
/// factor 1 returns the input unchanged. The seed is accepted for interface
/// uniformity; the algorithm is deterministic.
Waveform time_stretch(const Waveform& w, double factor, std::uint64_t seed = 0,
                      double window_ms = 25.0);

/// Speed perturbation through either backend.
Waveform speed_perturb(const Waveform& w, double factor, SpeedMode mode, std::uint64_t seed = 0);

struct LabeledWaveform {
  std::string id;
  std::string label;
  Waveform wave;
  std::optional<Provenance> provenance;
};

enum class PasteOrder { neutral_first, emotional_first };

/// Concatenates a neutral and an emotional utterance, keeping the emotional
/// label.
LabeledWaveform copy_paste(const LabeledWaveform& neutral, const LabeledWaveform& emotional,
                           PasteOrder order, double gap_ms = 0.0);

/// Appends copy-paste records until every emotional class matches the largest
/// class count. Original records are untouched.
Manifest balance_corpus(const Manifest& manifest, std::uint64_t seed, const ClassSet& classes = {});

/// Original records plus one augmented record per original per parameter
/// value. NoAug returns the input. CopyPaste is rejected.
Manifest expand_corpus(const Manifest& manifest, const AugmentSpec& spec);

/// Dispatches to expand_corpus or balance_corpus according to `spec.kind`.
Manifest augment_training_set(const Manifest& manifest, const AugmentSpec& spec,
                              const ClassSet& classes = {});

/// Resolves an original (non-augmented) record id to its waveform.
using WaveformSource = std::function<Waveform(const std::string& id)>;

/// Waveform of a record, applying its waveform-level augmentation. SpecAug
/// records resolve to their source waveform; masking happens on features.
Waveform render_waveform(const ManifestRecord& record, const WaveformSource& source,
                         SpeedMode speed_mode = SpeedMode::wsola);

}  // namespace serbench
