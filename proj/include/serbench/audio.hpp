#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <string>

#include "serbench/error.hpp"

namespace serbench {

/// Mono PCM audio in double precision. Amplitudes nominally lie in [-1, 1].
struct Waveform {
  Eigen::VectorXd samples;
  double sample_rate = 16000.0;

  Eigen::Index size() const { return samples.size(); }
  bool empty() const { return samples.size() == 0; }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Failure reading a WAV file. `kind` distinguishes the failure cause.
class WavError : public DataError {
 public:
  enum class Kind { missing_file, unsupported_encoding, truncated, io };

  WavError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Reads a RIFF/WAVE 16-bit PCM file; multichannel audio is averaged to mono
/// and samples are scaled by 1/32768.
Waveform load_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono. Samples outside [-1, 1] are clipped; the number of
/// clipped samples is returned.
std::size_t save_wav(const std::filesystem::path& path, const Waveform& w);

/// Mean squared amplitude of any Eigen vector expression.
template <typename Derived>
double mean_power(const Eigen::MatrixBase<Derived>& x) {
  if (x.size() == 0) throw DataError("mean_power: empty signal");
  return x.squaredNorm() / static_cast<double>(x.size());
}

inline double mean_power(const Waveform& w) { return mean_power(w.samples); }

/// `a`, then `gap_ms` of silence, then `b`.
Waveform concat(const Waveform& a, const Waveform& b, double gap_ms = 0.0);

/// Band-limited (Hann-windowed sinc) sample rate conversion. The target rate
/// must lie within [source/4, 4*source].
Waveform resample(const Waveform& w, double target_rate);

}  // namespace serbench
