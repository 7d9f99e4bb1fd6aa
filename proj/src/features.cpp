#include "serbench/features.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "serbench/blob_io.hpp"
#include "serbench/error.hpp"
#include "serbench/rng.hpp"

namespace serbench {
namespace {

constexpr double kLogFloor = 1e-10;
constexpr double kStdFloor = 1e-8;

Eigen::MatrixXd dct_matrix(int n_in, int n_out) {
  Eigen::MatrixXd d(n_in, n_out);
  for (int k = 0; k < n_out; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / n_in);
    for (int n = 0; n < n_in; ++n) {
      d(n, k) = scale * std::cos(std::numbers::pi * k * (2.0 * n + 1.0) / (2.0 * n_in));
    }
  }
  return d;
}

}  // namespace

int MelConfig::window_samples(double rate) const {
  return static_cast<int>(std::lround(window_ms * rate / 1000.0));
}

int MelConfig::shift_samples(double rate) const {
  return static_cast<int>(std::lround(shift_ms * rate / 1000.0));
}

int MelConfig::resolved_fft_size(double rate) const {
  if (fft_size > 0) return fft_size;
  int n = 1;
  while (n < window_samples(rate)) n *= 2;
  return n;
}

double MelConfig::resolved_f_max(double rate) const { return f_max > 0.0 ? f_max : rate / 2.0; }

void MelConfig::validate(double rate) const {
  if (!(rate > 0.0)) throw UsageError("MelConfig: sample rate must be positive");
  if (n_mels < 2) throw UsageError("MelConfig: n_mels must be at least 2");
  if (window_samples(rate) < 1 || shift_samples(rate) < 1) {
    throw UsageError("MelConfig: window and shift must span at least one sample");
  }
  if (shift_ms > window_ms) throw UsageError("MelConfig: shift_ms must not exceed window_ms");
  const int n_fft = resolved_fft_size(rate);
  if (n_fft < window_samples(rate) || (n_fft & (n_fft - 1)) != 0) {
    throw UsageError("MelConfig: fft_size must be a power of two >= window samples");
  }
  if (!(f_min >= 0.0 && f_min < resolved_f_max(rate) && resolved_f_max(rate) <= rate / 2.0)) {
    throw UsageError("MelConfig: require 0 <= f_min < f_max <= rate/2");
  }
  if (mode == FeatureMode::mfcc && (n_ceps < 1 || n_ceps > n_mels)) {
    throw UsageError("MelConfig: n_ceps must lie in [1, n_mels]");
  }
}

nlohmann::json MelConfig::to_json() const {
  return {{"n_mels", n_mels},     {"window_ms", window_ms}, {"shift_ms", shift_ms},
          {"fft_size", fft_size}, {"f_min", f_min},         {"f_max", f_max},
          {"mode", mode == FeatureMode::mfcc ? "mfcc" : "log_mel"},
          {"n_ceps", n_ceps}};
}

MelConfig MelConfig::from_json(const nlohmann::json& j) {
  MelConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "n_mels") cfg.n_mels = value.get<int>();
    else if (key == "window_ms") cfg.window_ms = value.get<double>();
    else if (key == "shift_ms") cfg.shift_ms = value.get<double>();
    else if (key == "fft_size") cfg.fft_size = value.get<int>();
    else if (key == "f_min") cfg.f_min = value.get<double>();
    else if (key == "f_max") cfg.f_max = value.get<double>();
    else if (key == "n_ceps") cfg.n_ceps = value.get<int>();
    else if (key == "mode") {
      const auto m = value.get<std::string>();
      if (m == "mfcc") cfg.mode = FeatureMode::mfcc;
      else if (m == "log_mel" || m == "log-mel") cfg.mode = FeatureMode::log_mel;
      else throw UsageError("features.mode: expected log_mel or mfcc, got '" + m + "'");
    } else {
      throw UsageError("features: unknown field '" + key + "'");
    }
  }
  return cfg;
}

Eigen::MatrixXd frame(const Waveform& w, const MelConfig& cfg) {
  cfg.validate(w.sample_rate);
  const int win = cfg.window_samples(w.sample_rate);
  const int shift = cfg.shift_samples(w.sample_rate);
  const int n_fft = cfg.resolved_fft_size(w.sample_rate);
  if (w.size() < win) {
    throw DataError("frame: utterance shorter than one window (" + std::to_string(w.size()) +
                    " < " + std::to_string(win) + " samples)");
  }
  const Eigen::Index n_frames = (w.size() - win) / shift + 1;

  Eigen::RowVectorXd hann(win);
  for (int i = 0; i < win; ++i) hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);

  Eigen::MatrixXd frames = Eigen::MatrixXd::Zero(n_frames, n_fft);
  for (Eigen::Index t = 0; t < n_frames; ++t) {
    frames.row(t).head(win) = w.samples.segment(t * shift, win).transpose().cwiseProduct(hann);
  }
  return frames;
}

Eigen::VectorXd mel_center_frequencies(const MelConfig& cfg, double rate) {
  cfg.validate(rate);
  const double lo = hz_to_mel(cfg.f_min);
  const double hi = hz_to_mel(cfg.resolved_f_max(rate));
  Eigen::VectorXd centers(cfg.n_mels);
  for (int m = 0; m < cfg.n_mels; ++m) {
    centers[m] = mel_to_hz(lo + (hi - lo) * (m + 1) / (cfg.n_mels + 1));
  }
  return centers;
}

Eigen::MatrixXd mel_filterbank_matrix(const MelConfig& cfg, double rate) {
  cfg.validate(rate);
  const int n_fft = cfg.resolved_fft_size(rate);
  const int n_bins = n_fft / 2 + 1;
  const Eigen::VectorXd centers = mel_center_frequencies(cfg, rate);
  const auto edge = [&](int m) {
    if (m < 0) return cfg.f_min;
    if (m >= cfg.n_mels) return cfg.resolved_f_max(rate);
    return centers[m];
  };

  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(cfg.n_mels, n_bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = edge(m - 1);
    const double center = edge(m);
    const double right = edge(m + 1);
    for (int k = 0; k < n_bins; ++k) {
      const double f = rate * k / n_fft;
      if (f > left && f <= center) fb(m, k) = (f - left) / (center - left);
      else if (f > center && f < right) fb(m, k) = (right - f) / (right - center);
    }
    if (!(fb.row(m).sum() > 0.0)) {
      throw UsageError("mel_filterbank_matrix: filter " + std::to_string(m) +
                       " is empty; n_mels too large for fft_size " + std::to_string(n_fft));
    }
  }
  return fb;
}

FeatureMatrix extract(const Waveform& w, const MelConfig& cfg, std::string source_id) {
  const Eigen::MatrixXd frames = frame(w, cfg);
  const Eigen::MatrixXd fb = mel_filterbank_matrix(cfg, w.sample_rate);
  const Eigen::Index n_fft = frames.cols();
  const Eigen::Index n_bins = n_fft / 2 + 1;

  Eigen::FFT<double> fft;
  std::vector<double> buffer(static_cast<std::size_t>(n_fft));
  std::vector<std::complex<double>> spectrum;
  Eigen::MatrixXd power(frames.rows(), n_bins);
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    for (Eigen::Index i = 0; i < n_fft; ++i) buffer[static_cast<std::size_t>(i)] = frames(t, i);
    fft.fwd(spectrum, buffer);
    for (Eigen::Index k = 0; k < n_bins; ++k) power(t, k) = std::norm(spectrum[static_cast<std::size_t>(k)]);
  }

  FeatureMatrix fm;
  fm.frame_shift_ms = cfg.shift_ms;
  fm.source_id = std::move(source_id);
  fm.values = ((power * fb.transpose()).array() + kLogFloor).log().matrix();
  if (cfg.mode == FeatureMode::mfcc) fm.values = fm.values * dct_matrix(cfg.n_mels, cfg.n_ceps);
  return fm;
}

std::vector<MaskInterval> sample_mask_intervals(Eigen::Index extent, Eigen::Index max_width,
                                                int count, std::uint64_t seed) {
  if (max_width < 0 || max_width > extent) {
    throw UsageError("mask: max_width " + std::to_string(max_width) + " outside [0, " +
                     std::to_string(extent) + "]");
  }
  if (count < 0) throw UsageError("mask: negative count");
  Rng rng = make_rng(seed);
  std::vector<MaskInterval> intervals;
  for (int i = 0; i < count; ++i) {
    MaskInterval m;
    m.width = std::uniform_int_distribution<Eigen::Index>(0, max_width)(rng);
    m.start = std::uniform_int_distribution<Eigen::Index>(0, extent - m.width)(rng);
    intervals.push_back(m);
  }
  return intervals;
}

FeatureMatrix time_mask(const FeatureMatrix& fm, Eigen::Index max_width, int count, double fill,
                        std::uint64_t seed) {
  FeatureMatrix out = fm;
  for (const auto& m : sample_mask_intervals(fm.frames(), max_width, count, seed)) {
    out.values.middleRows(m.start, m.width).setConstant(fill);
  }
  return out;
}

FeatureMatrix freq_mask(const FeatureMatrix& fm, Eigen::Index max_width, int count, double fill,
                        std::uint64_t seed) {
  FeatureMatrix out = fm;
  for (const auto& m : sample_mask_intervals(fm.dims(), max_width, count, seed)) {
    out.values.middleCols(m.start, m.width).setConstant(fill);
  }
  return out;
}

FeatureMatrix warp_time_axis(const FeatureMatrix& fm, Eigen::Index control,
                             Eigen::Index displacement) {
  const Eigen::Index n = fm.frames();
  const Eigen::Index moved = control + displacement;
  if (control < 0 || control >= n || moved < 0 || moved >= n) {
    throw UsageError("warp_time_axis: control point leaves the time axis");
  }
  if (displacement == 0) return fm;

  const auto last = static_cast<double>(n - 1);
  FeatureMatrix out = fm;
  for (Eigen::Index t = 0; t < n; ++t) {
    double src = 0.0;
    if (t <= moved) {
      src = moved == 0 ? 0.0 : static_cast<double>(t) * control / moved;
    } else {
      src = control + static_cast<double>(t - moved) * (last - control) / (last - moved);
    }
    const auto lo = std::min(static_cast<Eigen::Index>(std::floor(src)), n - 1);
    const double frac = src - static_cast<double>(lo);
    if (lo + 1 < n && frac > 0.0) {
      out.values.row(t) = (1.0 - frac) * fm.values.row(lo) + frac * fm.values.row(lo + 1);
    } else {
      out.values.row(t) = fm.values.row(lo);
    }
  }
  return out;
}

FeatureMatrix time_warp(const FeatureMatrix& fm, Eigen::Index max_shift, std::uint64_t seed) {
  if (max_shift < 0) throw UsageError("time_warp: negative max_shift");
  if (fm.frames() <= 2 * max_shift) {
    throw DataError("time_warp: T = " + std::to_string(fm.frames()) + " too short for max_shift " +
                    std::to_string(max_shift));
  }
  if (max_shift == 0) return fm;
  Rng rng = make_rng(seed);
  const Eigen::Index control =
      std::uniform_int_distribution<Eigen::Index>(max_shift, fm.frames() - 1 - max_shift)(rng);
  const Eigen::Index displacement =
      std::uniform_int_distribution<Eigen::Index>(-max_shift, max_shift)(rng);
  return warp_time_axis(fm, control, displacement);
}

FeatureMatrix spec_augment(const FeatureMatrix& fm, SpecAugMode mode, std::uint64_t seed,
                           const SpecAugPolicy& policy) {
  const double fill = fm.values.mean();
  const auto time_width = static_cast<Eigen::Index>(policy.time_mask_fraction *
                                                    static_cast<double>(fm.frames()));
  const Eigen::Index freq_width = std::min(policy.freq_mask_width, fm.dims());
  const auto time_seed = stream_seed(seed, "specaug", "time");
  const auto freq_seed = stream_seed(seed, "specaug", "freq");

  switch (mode) {
    case SpecAugMode::time: return time_mask(fm, time_width, policy.time_masks, fill, time_seed);
    case SpecAugMode::freq: return freq_mask(fm, freq_width, policy.freq_masks, fill, freq_seed);
    case SpecAugMode::time_freq: {
      FeatureMatrix out = time_mask(fm, time_width, policy.time_masks, fill, time_seed);
      out = freq_mask(out, freq_width, policy.freq_masks, fill, freq_seed);
      const Eigen::Index shift = std::min(policy.warp_shift, (fm.frames() - 1) / 2);
      return time_warp(out, shift, stream_seed(seed, "specaug", "warp"));
    }
  }
  return fm;
}

NormStats compute_norm_stats(const std::vector<FeatureMatrix>& features) {
  if (features.empty()) throw DataError("compute_norm_stats: no features");
  const Eigen::Index dims = features.front().dims();
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(dims);
  Eigen::RowVectorXd sum_sq = Eigen::RowVectorXd::Zero(dims);
  double count = 0.0;
  for (const auto& fm : features) {
    if (fm.dims() != dims) throw DataError("compute_norm_stats: inconsistent feature dimension");
    for (Eigen::Index t = 0; t < fm.frames(); ++t) {
      sum += fm.values.row(t);
      sum_sq += fm.values.row(t).cwiseAbs2();
    }
    count += static_cast<double>(fm.frames());
  }
  NormStats stats;
  stats.mean = sum / count;
  stats.stddev = (sum_sq / count - stats.mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
  return stats;
}

FeatureMatrix normalize(const FeatureMatrix& fm, const NormStats& stats) {
  if (stats.mean.size() != fm.dims() || stats.stddev.size() != fm.dims()) {
    throw DataError("normalize: stats dimension " + std::to_string(stats.mean.size()) +
                    " does not match feature dimension " + std::to_string(fm.dims()));
  }
  FeatureMatrix out = fm;
  const Eigen::RowVectorXd inv = stats.stddev.cwiseMax(kStdFloor).cwiseInverse();
  out.values = (fm.values.rowwise() - stats.mean).array().rowwise() * inv.array();
  return out;
}

void write_feature_cache(const std::filesystem::path& path, const FeatureMatrix& fm,
                         const MelConfig& cfg) {
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major = fm.values;
  const nlohmann::json header = {{"source_id", fm.source_id},
                                 {"T", fm.frames()},
                                 {"F", fm.dims()},
                                 {"frame_shift_ms", fm.frame_shift_ms},
                                 {"cfg_hash", content_hash(cfg.to_json())}};
  write_blob_file(path, header, std::span<const double>(row_major.data(),
                                                        static_cast<std::size_t>(row_major.size())));
}

std::optional<FeatureMatrix> read_feature_cache(const std::filesystem::path& path,
                                                const MelConfig& cfg) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  BlobFile blob = read_blob_file(path);
  if (blob.header.value("cfg_hash", std::string{}) != content_hash(cfg.to_json())) return std::nullopt;
  const auto rows = blob.header.at("T").get<Eigen::Index>();
  const auto cols = blob.header.at("F").get<Eigen::Index>();
  if (static_cast<Eigen::Index>(blob.payload.size()) != rows * cols) {
    throw DataError(path.string() + ": feature payload size does not match header");
  }
  FeatureMatrix fm;
  fm.source_id = blob.header.value("source_id", std::string{});
  fm.frame_shift_ms = blob.header.value("frame_shift_ms", cfg.shift_ms);
  fm.values = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      blob.payload.data(), rows, cols);
  return fm;
}

}  // namespace serbench
