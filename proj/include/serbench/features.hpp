#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "serbench/audio.hpp"
#include "serbench/augment.hpp"

namespace serbench {

enum class FeatureMode { log_mel, mfcc };

struct MelConfig {
  int n_mels = 23;
  double window_ms = 5.0;
  double shift_ms = 5.0;
  int fft_size = 0;      // 0: next power of two >= window samples
  double f_min = 0.0;
  double f_max = 0.0;    // 0: Nyquist
  FeatureMode mode = FeatureMode::log_mel;
  int n_ceps = 13;       // mfcc mode only

  int window_samples(double rate) const;
  int shift_samples(double rate) const;
  int resolved_fft_size(double rate) const;
  double resolved_f_max(double rate) const;
  int feature_dim() const { return mode == FeatureMode::mfcc ? n_ceps : n_mels; }

  /// Throws UsageError when the configuration is invalid at `rate`.
  void validate(double rate) const;

  nlohmann::json to_json() const;
  static MelConfig from_json(const nlohmann::json& j);
};

/// T x F time-frequency representation of one utterance.
struct FeatureMatrix {
  Eigen::MatrixXd values;
  double frame_shift_ms = 5.0;
  std::string source_id;

  Eigen::Index frames() const { return values.rows(); }
  Eigen::Index dims() const { return values.cols(); }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Hann-windowed frames, zero padded to the FFT size: T x fft_size with
/// T = floor((N - win) / shift) + 1.
Eigen::MatrixXd frame(const Waveform& w, const MelConfig& cfg);

/// Center frequencies (Hz) of the triangular filters.
Eigen::VectorXd mel_center_frequencies(const MelConfig& cfg, double rate);

/// n_mels x (fft_size/2 + 1) triangular filterbank on the mel scale.
Eigen::MatrixXd mel_filterbank_matrix(const MelConfig& cfg, double rate);

/// log(fbank * |FFT|^2 + 1e-10); mfcc mode adds an orthonormal DCT-II.
FeatureMatrix extract(const Waveform& w, const MelConfig& cfg, std::string source_id = {});

struct MaskInterval {
  Eigen::Index start = 0;
  Eigen::Index width = 0;
};

/// `count` intervals with width ~ U[0, max_width], start ~ U[0, extent - width].
std::vector<MaskInterval> sample_mask_intervals(Eigen::Index extent, Eigen::Index max_width,
                                                int count, std::uint64_t seed);

FeatureMatrix time_mask(const FeatureMatrix& fm, Eigen::Index max_width, int count, double fill,
                        std::uint64_t seed);
FeatureMatrix freq_mask(const FeatureMatrix& fm, Eigen::Index max_width, int count, double fill,
                        std::uint64_t seed);

/// Moves frame `control` to `control + displacement` and remaps the other
/// frames piecewise linearly, interpolating between neighbouring frames.
FeatureMatrix warp_time_axis(const FeatureMatrix& fm, Eigen::Index control,
                             Eigen::Index displacement);

/// Random control point in [max_shift, T-1-max_shift], displacement in
/// [-max_shift, max_shift].
FeatureMatrix time_warp(const FeatureMatrix& fm, Eigen::Index max_shift, std::uint64_t seed);

struct SpecAugPolicy {
  double time_mask_fraction = 0.10;
  int time_masks = 1;
  Eigen::Index freq_mask_width = 5;
  int freq_masks = 1;
  Eigen::Index warp_shift = 5;
};

/// T: time mask; F: frequency mask; TF: time_warp(freq_mask(time_mask(x))).
/// Masks fill with the mean of the input matrix.
FeatureMatrix spec_augment(const FeatureMatrix& fm, SpecAugMode mode, std::uint64_t seed,
                           const SpecAugPolicy& policy = {});

/// Per-dimension statistics for feature standardization.
struct NormStats {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd stddev;
};

/// Population mean/std over all frames of `features`, accumulated in order.
NormStats compute_norm_stats(const std::vector<FeatureMatrix>& features);

/// (x - mean) / max(std, 1e-8) per dimension.
FeatureMatrix normalize(const FeatureMatrix& fm, const NormStats& stats);

/// Feature cache file: JSON header {source_id, T, F, cfg_hash} + row-major
/// float64 payload.
void write_feature_cache(const std::filesystem::path& path, const FeatureMatrix& fm,
                         const MelConfig& cfg);

/// Returns nullopt when the file is missing or was built with another config.
std::optional<FeatureMatrix> read_feature_cache(const std::filesystem::path& path,
                                                const MelConfig& cfg);

}  // namespace serbench
