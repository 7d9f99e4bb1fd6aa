#include "serbench/audio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <vector>

namespace serbench {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

void put_u16(std::ostream& out, std::uint16_t v) {
  const char bytes[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  out.write(bytes, 2);
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace

Waveform load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw WavError(WavError::Kind::missing_file, "cannot open WAV file: " + path.string());
  }
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  const auto truncated = [&](const char* what) {
    return WavError(WavError::Kind::truncated,
                    path.string() + ": truncated WAV container (" + what + ")");
  };
  if (bytes.size() < 12) throw truncated("RIFF header");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw WavError(WavError::Kind::unsupported_encoding, path.string() + ": not a RIFF/WAVE file");
  }

  std::uint16_t channels = 0;
  std::uint16_t bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (true) {
    if (pos + 8 > bytes.size()) throw truncated(have_fmt ? "missing data chunk" : "missing fmt chunk");
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t chunk_size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (chunk_size < 16 || body + 16 > bytes.size()) throw truncated("fmt chunk");
      std::uint16_t format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      if (format == kFormatExtensible && chunk_size >= 40 && body + 26 <= bytes.size()) {
        format = read_u16(bytes.data() + body + 24);
      }
      if (format != kFormatPcm || bits != 16) {
        throw WavError(WavError::Kind::unsupported_encoding,
                       path.string() + ": unsupported encoding (format " + std::to_string(format) +
                           ", " + std::to_string(bits) + " bits); only 16-bit PCM is supported");
      }
      if (channels == 0 || rate == 0) {
        throw WavError(WavError::Kind::unsupported_encoding, path.string() + ": invalid fmt chunk");
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw truncated("data chunk before fmt chunk");
      if (body + chunk_size > bytes.size()) throw truncated("data chunk");
      const std::size_t frame_bytes = 2u * channels;
      const std::size_t frames = chunk_size / frame_bytes;
      Waveform w;
      w.sample_rate = rate;
      w.samples.resize(static_cast<Eigen::Index>(frames));
      const unsigned char* data = bytes.data() + body;
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::uint16_t c = 0; c < channels; ++c) {
          acc += static_cast<std::int16_t>(read_u16(data + (i * channels + c) * 2));
        }
        w.samples[static_cast<Eigen::Index>(i)] = acc / channels / 32768.0;
      }
      return w;
    }
    pos = body + chunk_size + (chunk_size & 1u);
  }
}

std::size_t save_wav(const std::filesystem::path& path, const Waveform& w) {
  if (w.empty()) throw DataError("save_wav: empty waveform");
  if (!w.samples.allFinite()) throw DataError("save_wav: non-finite amplitude");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_wav: cannot write " + path.string());

  const auto n = static_cast<std::uint32_t>(w.size());
  const auto rate = static_cast<std::uint32_t>(std::lround(w.sample_rate));
  out.write("RIFF", 4);
  put_u32(out, 36 + 2 * n);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, rate);
  put_u32(out, rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.write("data", 4);
  put_u32(out, 2 * n);

  std::size_t clipped = 0;
  std::vector<char> pcm(2 * static_cast<std::size_t>(n));
  for (std::uint32_t i = 0; i < n; ++i) {
    const double x = w.samples[i];
    if (x > 1.0 || x < -1.0) ++clipped;
    const long q = std::clamp(std::lround(x * 32768.0), -32768L, 32767L);
    const auto u = static_cast<std::uint16_t>(static_cast<std::int16_t>(q));
    pcm[2 * i] = static_cast<char>(u & 0xff);
    pcm[2 * i + 1] = static_cast<char>(u >> 8);
  }
  out.write(pcm.data(), static_cast<std::streamsize>(pcm.size()));
  if (!out) throw DataError("save_wav: write failed for " + path.string());
  return clipped;
}

Waveform concat(const Waveform& a, const Waveform& b, double gap_ms) {
  if (a.sample_rate != b.sample_rate) {
    throw DataError("concat: sample rate mismatch (" + std::to_string(a.sample_rate) + " vs " +
                    std::to_string(b.sample_rate) + ")");
  }
  if (gap_ms < 0.0) throw UsageError("concat: negative gap");
  const auto gap = static_cast<Eigen::Index>(std::lround(gap_ms * a.sample_rate / 1000.0));
  Waveform out;
  out.sample_rate = a.sample_rate;
  out.samples = Eigen::VectorXd::Zero(a.size() + gap + b.size());
  out.samples.head(a.size()) = a.samples;
  out.samples.tail(b.size()) = b.samples;
  return out;
}

Waveform resample(const Waveform& w, double target_rate) {
  if (!(target_rate > 0.0)) throw UsageError("resample: target rate must be positive");
  const double ratio = target_rate / w.sample_rate;
  if (ratio > 4.0 || ratio < 0.25) {
    throw UsageError("resample: ratio " + std::to_string(ratio) + " outside [1/4, 4]");
  }
  if (target_rate == w.sample_rate) return w;

  constexpr int kZeroCrossings = 16;
  const Eigen::Index n_in = w.size();
  const auto n_out = static_cast<Eigen::Index>(std::lround(static_cast<double>(n_in) * ratio));
  // Cutoff relative to the input Nyquist; below 1 when downsampling.
  const double cutoff = std::min(1.0, ratio);
  const double half_width = kZeroCrossings / cutoff;

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  for (Eigen::Index n = 0; n < n_out; ++n) {
    const double t = static_cast<double>(n) / ratio;
    const auto lo = static_cast<Eigen::Index>(std::ceil(t - half_width));
    const auto hi = static_cast<Eigen::Index>(std::floor(t + half_width));
    double acc = 0.0;
    for (Eigen::Index i = std::max<Eigen::Index>(lo, 0); i <= std::min(hi, n_in - 1); ++i) {
      const double x = static_cast<double>(i) - t;
      const double window = 0.5 + 0.5 * std::cos(std::numbers::pi * x / half_width);
      acc += w.samples[i] * cutoff * sinc(cutoff * x) * window;
    }
    out.samples[n] = acc;
  }
  return out;
}

}  // namespace serbench
