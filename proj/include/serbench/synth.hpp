#pragma once

#include <cstdint>
#include <filesystem>

#include "serbench/audio.hpp"
#include "serbench/manifest.hpp"

namespace serbench {

/// Desk-scale stand-in for an emotional speech corpus. Each class has its
/// own pitch base, pitch slope and amplitude-modulation rate; utterances add
/// per-speaker offsets and per-utterance jitter.
struct SynthConfig {
  int n_per_class = 100;
  double duration_s = 1.0;
  double sample_rate = 16000.0;
  int n_speakers = 10;  // alternating M/F, one fold group per speaker
  std::uint64_t seed = 0;
};

/// Generates one utterance of class `class_index` (order of ClassSet{}).
Waveform synth_utterance(int class_index, int speaker, std::uint64_t utterance_seed,
                         const SynthConfig& cfg);

/// Writes `out_dir`/wav/<id>.wav and `out_dir`/manifest.jsonl; returns the
/// manifest with absolute paths.
Manifest synth_corpus(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace serbench
