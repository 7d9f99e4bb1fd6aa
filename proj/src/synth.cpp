#include "serbench/synth.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "serbench/error.hpp"
#include "serbench/rng.hpp"

namespace serbench {
namespace {

struct ClassVoice {
  double pitch_hz;
  double pitch_slope;  // relative pitch change across the utterance
  double am_rate_hz;
};

// neutral, angry, sad, happy
constexpr std::array<ClassVoice, 4> kVoices{{
    {150.0, 0.0, 3.0},
    {215.0, -0.15, 6.0},
    {125.0, -0.25, 2.0},
    {185.0, 0.30, 4.5},
}};

std::string speaker_name(int speaker) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "spk%02d", speaker);
  return buf;
}

}  // namespace

Waveform synth_utterance(int class_index, int speaker, std::uint64_t utterance_seed,
                         const SynthConfig& cfg) {
  if (class_index < 0 || class_index >= static_cast<int>(kVoices.size())) {
    throw UsageError("synth_utterance: class index out of range");
  }
  const ClassVoice& voice = kVoices[static_cast<std::size_t>(class_index)];
  Rng speaker_rng = make_rng(stream_seed(cfg.seed, speaker_name(speaker), "speaker"));
  std::uniform_real_distribution<double> speaker_offset(-0.12, 0.12);
  const double speaker_pitch = 1.0 + speaker_offset(speaker_rng) + (speaker % 2 == 1 ? 0.06 : 0.0);
  const double speaker_am = 1.0 + speaker_offset(speaker_rng);

  Rng rng = make_rng(utterance_seed);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> floor_noise(0.0, 0.08);

  const double f0 = voice.pitch_hz * speaker_pitch * (1.0 + 0.08 * jitter(rng));
  const double slope = voice.pitch_slope + 0.15 * jitter(rng);
  const double am_rate = voice.am_rate_hz * speaker_am * (1.0 + 0.2 * jitter(rng));
  const double am_phase = phase(rng);
  const int harmonics = std::max(1, std::min(10, static_cast<int>(cfg.sample_rate / (3.0 * f0))));

  const auto n = static_cast<Eigen::Index>(std::lround(cfg.duration_s * cfg.sample_rate));
  if (n <= 0) throw UsageError("synth_utterance: duration must be positive");
  Waveform w;
  w.sample_rate = cfg.sample_rate;
  w.samples.resize(n);
  double theta = phase(rng);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / cfg.sample_rate;
    const double f = f0 * (1.0 + slope * (t / cfg.duration_s - 0.5));
    theta += 2.0 * std::numbers::pi * f / cfg.sample_rate;
    double voiced = 0.0;
    for (int h = 1; h <= harmonics; ++h) voiced += std::sin(h * theta) / h;
    const double envelope = 0.55 + 0.45 * std::sin(2.0 * std::numbers::pi * am_rate * t + am_phase);
    w.samples[i] = envelope * voiced + floor_noise(rng);
  }
  w.samples *= 0.6 / w.samples.cwiseAbs().maxCoeff();
  return w;
}

Manifest synth_corpus(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.n_per_class < 1) throw UsageError("synth_corpus: n_per_class must be at least 1");
  if (cfg.n_speakers < 1) throw UsageError("synth_corpus: n_speakers must be at least 1");
  const ClassSet classes;
  std::filesystem::create_directories(out_dir / "wav");

  Manifest manifest;
  Manifest on_disk;
  for (int k = 0; k < cfg.n_per_class; ++k) {
    for (int c = 0; c < classes.size(); ++c) {
      const int speaker = k % cfg.n_speakers;
      char id[64];
      std::snprintf(id, sizeof id, "%s_%s_%04d", classes.labels[static_cast<std::size_t>(c)].c_str(),
                    speaker_name(speaker).c_str(), k);
      const std::uint64_t utt_seed = stream_seed(cfg.seed, id, "synth");

      ManifestRecord r;
      r.id = id;
      r.path = "wav/" + r.id + ".wav";
      r.label = classes.labels[static_cast<std::size_t>(c)];
      r.speaker = speaker_name(speaker);
      r.group = r.speaker;
      r.gender = speaker % 2 == 0 ? 'M' : 'F';
      Rng agreement_rng = make_rng(stream_seed(cfg.seed, r.id, "agreement"));
      r.rater_agreement = std::round(std::uniform_real_distribution<double>(0.3, 1.0)(agreement_rng) * 100.0) / 100.0;

      save_wav(out_dir / r.path, synth_utterance(c, speaker, utt_seed, cfg));
      on_disk.push_back(r);
      r.path = (out_dir / r.path).lexically_normal().string();
      manifest.push_back(std::move(r));
    }
  }
  write_manifest(out_dir / "manifest.jsonl", on_disk);
  return manifest;
}

}  // namespace serbench
