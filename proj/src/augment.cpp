#include "serbench/augment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "serbench/error.hpp"
#include "serbench/rng.hpp"

namespace serbench {
namespace {

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  out.erase(std::remove(out.begin(), out.end(), ' '), out.end());
  return out;
}

// Text between the parentheses of "name(arg)", or nullopt when `s` is not of
// that form.
std::optional<std::string> call_argument(const std::string& s, std::string_view name) {
  if (s.size() < name.size() + 2 || s.compare(0, name.size(), name) != 0) return std::nullopt;
  if (s[name.size()] != '(' || s.back() != ')') return std::nullopt;
  return s.substr(name.size() + 1, s.size() - name.size() - 2);
}

double parse_double(const std::string& text, std::string_view what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw UsageError("augmentation: cannot parse " + std::string(what) + " '" + text + "'");
  }
}

[[noreturn]] void unknown_strategy(std::string_view text) {
  throw UsageError("unknown augmentation '" + std::string(text) +
                   "'; valid names: NoAug, Noise(<snr>db), SpecAug(T|F|TF), Speed(<factor>|M), "
                   "CopyPaste");
}

std::string expansion_tag(const AugmentSpec& spec, std::size_t value_index) {
  switch (spec.kind) {
    case AugmentKind::noise: return "noise" + format_number(spec.snr_db);
    case AugmentKind::speed: return "speed" + format_number(spec.speed_factors[value_index]);
    case AugmentKind::spec_aug: return "specaug" + std::string(to_string(spec.mode));
    default: return "none";
  }
}

}  // namespace

std::string_view to_string(SpecAugMode mode) {
  switch (mode) {
    case SpecAugMode::time: return "T";
    case SpecAugMode::freq: return "F";
    case SpecAugMode::time_freq: return "TF";
  }
  return "TF";
}

std::string AugmentSpec::name() const {
  switch (kind) {
    case AugmentKind::none: return "NoAug";
    case AugmentKind::noise: return "Noise(" + format_number(snr_db) + "db)";
    case AugmentKind::spec_aug: return "SpecAug(" + std::string(to_string(mode)) + ")";
    case AugmentKind::speed:
      if (speed_factors.size() == 2 && speed_factors[0] == 0.9 && speed_factors[1] == 1.1) {
        return "Speed(M)";
      }
      return "Speed(" + format_number(speed_factors.front()) + ")";
    case AugmentKind::copy_paste: return "CopyPaste";
  }
  return "NoAug";
}

AugmentSpec AugmentSpec::parse(std::string_view text) {
  const std::string s = lowercase(text);
  AugmentSpec spec;
  if (s == "noaug" || s == "none") return spec;
  if (s == "copypaste" || s == "copy_paste" || s == "copy-paste") {
    spec.kind = AugmentKind::copy_paste;
    return spec;
  }
  if (auto arg = call_argument(s, "noise")) {
    std::string v = *arg;
    if (v.size() > 2 && v.ends_with("db")) v.resize(v.size() - 2);
    spec.kind = AugmentKind::noise;
    spec.snr_db = parse_double(v, "SNR");
    if (!std::isfinite(spec.snr_db)) throw UsageError("augmentation: SNR must be finite");
    return spec;
  }
  if (auto arg = call_argument(s, "specaug")) {
    spec.kind = AugmentKind::spec_aug;
    if (*arg == "t") spec.mode = SpecAugMode::time;
    else if (*arg == "f") spec.mode = SpecAugMode::freq;
    else if (*arg == "tf" || *arg == "ft") spec.mode = SpecAugMode::time_freq;
    else unknown_strategy(text);
    return spec;
  }
  if (auto arg = call_argument(s, "speed")) {
    spec.kind = AugmentKind::speed;
    if (*arg == "m" || *arg == "mixed") {
      spec.speed_factors = {0.9, 1.1};
    } else {
      const double f = parse_double(*arg, "speed factor");
      if (!(f > 0.0)) throw UsageError("augmentation: speed factor must be positive");
      spec.speed_factors = {f};
    }
    return spec;
  }
  unknown_strategy(text);
}

std::vector<AugmentSpec> standard_augmentation_grid() {
  std::vector<AugmentSpec> grid;
  for (const char* name : {"NoAug", "Noise(10db)", "Noise(20db)", "Noise(30db)", "SpecAug(TF)",
                           "SpecAug(T)", "SpecAug(F)", "Speed(0.9)", "Speed(1.1)", "Speed(M)",
                           "CopyPaste"}) {
    grid.push_back(AugmentSpec::parse(name));
  }
  return grid;
}

Waveform add_noise(const Waveform& w, double snr_db, std::uint64_t seed) {
  if (!std::isfinite(snr_db)) throw UsageError("add_noise: SNR must be finite");
  const double signal_power = mean_power(w);
  if (!(signal_power > 0.0)) throw DataError("add_noise: zero-power signal, SNR undefined");

  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd noise(w.size());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = normal(rng);

  const double target_power = signal_power / std::pow(10.0, snr_db / 10.0);
  noise *= std::sqrt(target_power / mean_power(noise));

  Waveform out = w;
  out.samples += noise;
  return out;
}

Waveform time_stretch(const Waveform& w, double factor, std::uint64_t /*seed*/, double window_ms) {
  if (!(factor >= 0.5 && factor <= 2.0)) {
    throw UsageError("time_stretch: factor " + format_number(factor) + " outside [0.5, 2]");
  }
  if (factor == 1.0) return w;

  Eigen::Index frame = 2 * static_cast<Eigen::Index>(std::lround(window_ms * w.sample_rate / 2000.0));
  const Eigen::Index n = w.size();
  if (frame < 4 || n < frame) {
    throw DataError("time_stretch: input shorter than one analysis window");
  }
  const Eigen::Index synthesis_hop = frame / 2;
  const double analysis_hop = static_cast<double>(synthesis_hop) * factor;
  const Eigen::Index tolerance = synthesis_hop / 2;
  const auto out_len = static_cast<Eigen::Index>(std::lround(static_cast<double>(n) / factor));
  const Eigen::Index last_start = n - frame;

  Eigen::VectorXd window(frame);
  for (Eigen::Index i = 0; i < frame; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                      static_cast<double>(frame));
  }

  const Eigen::Index n_frames = out_len / synthesis_hop + 1;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(n_frames * synthesis_hop + frame);
  Eigen::VectorXd weight = Eigen::VectorXd::Zero(acc.size());

  Eigen::Index prev = 0;
  for (Eigen::Index k = 0; k < n_frames; ++k) {
    Eigen::Index pos = 0;
    if (k > 0) {
      // Pick the segment near the nominal position that best continues the
      // previously copied segment.
      const Eigen::Index natural = std::min(prev + synthesis_hop, last_start);
      const auto nominal =
          static_cast<Eigen::Index>(std::lround(static_cast<double>(k) * analysis_hop));
      const auto lo = std::clamp(nominal - tolerance, Eigen::Index{0}, last_start);
      const auto hi = std::clamp(nominal + tolerance, Eigen::Index{0}, last_start);
      const auto tmpl = w.samples.segment(natural, frame);
      double best = -std::numeric_limits<double>::infinity();
      pos = lo;
      for (Eigen::Index cand = lo; cand <= hi; ++cand) {
        const double score = tmpl.dot(w.samples.segment(cand, frame));
        if (score > best) {
          best = score;
          pos = cand;
        }
      }
    }
    const Eigen::Index out_pos = k * synthesis_hop;
    acc.segment(out_pos, frame) += window.cwiseProduct(w.samples.segment(pos, frame));
    weight.segment(out_pos, frame) += window;
    prev = pos;
  }

  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.resize(out_len);
  for (Eigen::Index i = 0; i < out_len; ++i) {
    out.samples[i] = weight[i] > 1e-6 ? acc[i] / weight[i] : 0.0;
  }
  return out;
}

Waveform speed_perturb(const Waveform& w, double factor, SpeedMode mode, std::uint64_t seed) {
  if (mode == SpeedMode::wsola) return time_stretch(w, factor, seed);
  if (factor == 1.0) return w;
  // Reinterpret at rate*factor and convert back: duration / factor, pitch * factor.
  Waveform relabeled = w;
  relabeled.sample_rate = w.sample_rate * factor;
  return resample(relabeled, w.sample_rate);
}

LabeledWaveform copy_paste(const LabeledWaveform& neutral, const LabeledWaveform& emotional,
                           PasteOrder order, double gap_ms) {
  if (neutral.label != kNeutralLabel) {
    throw DataError("copy_paste: first input '" + neutral.id + "' is not neutral (label '" +
                    neutral.label + "')");
  }
  if (emotional.label == kNeutralLabel) {
    throw DataError("copy_paste: second input '" + emotional.id + "' must be emotional");
  }
  const bool neutral_first = order == PasteOrder::neutral_first;
  const LabeledWaveform& first = neutral_first ? neutral : emotional;
  const LabeledWaveform& second = neutral_first ? emotional : neutral;

  LabeledWaveform out;
  out.wave = concat(first.wave, second.wave, gap_ms);
  out.label = emotional.label;
  out.id = emotional.id + "|cp|" + neutral.id;
  Provenance p;
  p.strategy = "copy_paste";
  p.source_ids = {first.id, second.id};
  p.params = {{"order", neutral_first ? "neutral_first" : "emotional_first"},
              {"gap_ms", gap_ms},
              {"neutral", neutral.id},
              {"emotional", emotional.id}};
  out.provenance = std::move(p);
  return out;
}

Manifest balance_corpus(const Manifest& manifest, std::uint64_t seed, const ClassSet& classes) {
  const std::vector<int> counts = class_histogram(manifest, classes);
  std::vector<const ManifestRecord*> neutrals;
  for (const auto& r : manifest) {
    if (r.label == kNeutralLabel && !r.is_augmented()) neutrals.push_back(&r);
  }
  if (neutrals.empty()) throw DataError("balance_corpus: no neutral utterances available");
  const int target = *std::max_element(counts.begin(), counts.end());

  Manifest out = manifest;
  Rng rng = make_rng(stream_seed(seed, "balance_corpus", "copy_paste"));
  std::uniform_int_distribution<std::size_t> pick_neutral(0, neutrals.size() - 1);
  std::bernoulli_distribution neutral_first(0.5);

  for (int c = 0; c < classes.size(); ++c) {
    const std::string& label = classes.labels[static_cast<std::size_t>(c)];
    if (label == kNeutralLabel) continue;
    std::vector<const ManifestRecord*> parents;
    for (const auto& r : manifest) {
      if (r.label == label && !r.is_augmented()) parents.push_back(&r);
    }
    if (parents.empty()) throw DataError("balance_corpus: class '" + label + "' is empty");
    std::shuffle(parents.begin(), parents.end(), rng);

    const int deficit = target - counts[static_cast<std::size_t>(c)];
    for (int j = 0; j < deficit; ++j) {
      const ManifestRecord& parent = *parents[static_cast<std::size_t>(j) % parents.size()];
      const ManifestRecord& partner = *neutrals[pick_neutral(rng)];
      const bool nfirst = neutral_first(rng);

      ManifestRecord rec;
      rec.id = parent.id + "|cp" + std::to_string(j) + "|" + partner.id;
      rec.label = parent.label;
      rec.speaker = parent.speaker;
      rec.group = parent.group;
      rec.gender = parent.gender;
      Provenance p;
      p.strategy = "copy_paste";
      p.source_ids = nfirst ? std::vector{partner.id, parent.id} : std::vector{parent.id, partner.id};
      p.params = {{"order", nfirst ? "neutral_first" : "emotional_first"},
                  {"gap_ms", 0.0},
                  {"neutral", partner.id},
                  {"emotional", parent.id}};
      p.seed = seed;
      rec.provenance = std::move(p);
      out.push_back(std::move(rec));
    }
  }
  return out;
}

Manifest expand_corpus(const Manifest& manifest, const AugmentSpec& spec) {
  if (spec.kind == AugmentKind::copy_paste) {
    throw UsageError("expand_corpus: CopyPaste is a balancing policy; use balance_corpus");
  }
  if (spec.kind == AugmentKind::none) return manifest;
  if (spec.kind == AugmentKind::speed) {
    for (double f : spec.speed_factors) {
      if (!(f > 0.0)) throw UsageError("expand_corpus: speed factor must be positive");
    }
  }

  const std::size_t n_values = spec.kind == AugmentKind::speed ? spec.speed_factors.size() : 1;
  Manifest out = manifest;
  out.reserve(manifest.size() * (1 + n_values));
  for (std::size_t v = 0; v < n_values; ++v) {
    const std::string tag = expansion_tag(spec, v);
    for (const auto& r : manifest) {
      if (r.is_augmented()) continue;
      ManifestRecord rec = r;
      rec.id = r.id + "#" + tag;
      rec.path.clear();
      Provenance p;
      p.source_ids = {r.id};
      p.seed = stream_seed(spec.seed, r.id, tag);
      switch (spec.kind) {
        case AugmentKind::noise:
          p.strategy = "noise";
          p.params = {{"snr_db", spec.snr_db}};
          break;
        case AugmentKind::speed:
          p.strategy = "speed";
          p.params = {{"factor", spec.speed_factors[v]}};
          break;
        default:
          p.strategy = "specaug";
          p.params = {{"mode", std::string(to_string(spec.mode))}};
          break;
      }
      rec.provenance = std::move(p);
      out.push_back(std::move(rec));
    }
  }
  return out;
}

Manifest augment_training_set(const Manifest& manifest, const AugmentSpec& spec,
                              const ClassSet& classes) {
  if (spec.kind == AugmentKind::copy_paste) return balance_corpus(manifest, spec.seed, classes);
  return expand_corpus(manifest, spec);
}

Waveform render_waveform(const ManifestRecord& record, const WaveformSource& source,
                         SpeedMode speed_mode) {
  if (!record.provenance) return source(record.id);
  const Provenance& p = *record.provenance;
  if (p.source_ids.empty()) throw DataError("record '" + record.id + "' has no provenance sources");
  if (p.strategy == "noise") {
    return add_noise(source(p.source_ids[0]), p.params.at("snr_db").get<double>(), p.seed);
  }
  if (p.strategy == "speed") {
    return speed_perturb(source(p.source_ids[0]), p.params.at("factor").get<double>(), speed_mode,
                         p.seed);
  }
  if (p.strategy == "specaug") return source(p.source_ids[0]);
  if (p.strategy == "copy_paste") {
    if (p.source_ids.size() != 2) throw DataError("copy_paste record '" + record.id + "' needs two sources");
    return concat(source(p.source_ids[0]), source(p.source_ids[1]), p.params.value("gap_ms", 0.0));
  }
  throw DataError("record '" + record.id + "': unknown augmentation strategy '" + p.strategy + "'");
}

}  // namespace serbench
