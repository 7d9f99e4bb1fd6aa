// serbench: command-line front end for the emotion-recognition benchmark.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>

#include "serbench/augment.hpp"
#include "serbench/benchmark.hpp"
#include "serbench/blob_io.hpp"
#include "serbench/error.hpp"
#include "serbench/features.hpp"
#include "serbench/folds.hpp"
#include "serbench/manifest.hpp"
#include "serbench/models.hpp"
#include "serbench/report.hpp"
#include "serbench/synth.hpp"
#include "serbench/training.hpp"

namespace fs = std::filesystem;
using namespace serbench;

namespace {

struct GlobalOptions {
  std::string seed;
  std::string config;
  std::string out_dir = ".";
  int jobs = 1;
};

void log(const std::string& msg) { std::clog << "[serbench] " << msg << "\n"; }

std::optional<std::uint64_t> parse_seed(const std::string& text) {
  if (text.empty()) return std::nullopt;
  if (text == "auto") {
    std::random_device rd;
    const std::uint64_t seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    log("--seed auto resolved to " + std::to_string(seed));
    return seed;
  }
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw UsageError("--seed expects a non-negative integer or 'auto', got '" + text + "'");
  }
}

std::uint64_t require_seed(const GlobalOptions& g) {
  const auto seed = parse_seed(g.seed);
  if (!seed) throw UsageError("an explicit --seed is required (or --seed auto)");
  return *seed;
}

/// Bench config from --config (if any) with the global seed applied; flags win.
BenchConfig load_config(const GlobalOptions& g) {
  BenchConfig cfg;
  if (!g.config.empty()) {
    cfg = BenchConfig::load(g.config);
  } else {
    cfg = BenchConfig::parse("{}");
  }
  if (const auto seed = parse_seed(g.seed)) {
    cfg.seed = *seed;
    cfg.has_seed = true;
    if (cfg.synth) cfg.synth->seed = *seed;
  }
  if (!cfg.has_seed) throw UsageError("an explicit seed is required (--seed N, --seed auto, or config 'seed')");
  for (auto& a : cfg.augmentations) a.seed = cfg.seed;
  return cfg;
}

void log_resolved(const std::string& what, const nlohmann::json& resolved, const std::vector<fs::path>& inputs) {
  nlohmann::json hashed = {{"config", resolved}};
  for (const auto& p : inputs) {
    if (fs::is_regular_file(p)) hashed["inputs"][p.string()] = file_hash(p);
  }
  log(what + " resolved config: " + resolved.dump());
  log(what + " content hash: " + content_hash(hashed));
}

std::string strategy_name(const std::string& strategy, const std::string& snr, const std::string& factor,
                          const std::string& mode) {
  if (strategy == "noise") return "Noise(" + snr + ")";
  if (strategy == "speed") return "Speed(" + factor + ")";
  if (strategy == "specaug") return "SpecAug(" + mode + ")";
  if (strategy == "copypaste" || strategy == "copy_paste" || strategy == "copy-paste") return "CopyPaste";
  if (strategy == "noaug" || strategy == "none") return "NoAug";
  return strategy;  // canonical condition names pass through
}

std::string safe_name(std::string id) {
  for (char& c : id) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  }
  return id;
}

ModelEntry resolve_model(const BenchConfig& cfg, const std::string& model_config, const std::string& model_name) {
  ModelEntry entry;
  if (!model_config.empty()) {
    nlohmann::json spec;
    if (fs::is_regular_file(model_config)) {
      std::ifstream in(model_config);
      try {
        spec = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw UsageError("--model-config " + model_config + ": " + e.what());
      }
    } else {
      spec = model_config;
    }
    if (spec.is_object() && spec.contains("name")) {
      entry.name = spec.at("name").get<std::string>();
      spec.erase("name");
    }
    entry.config = ModelConfig::from_json(spec);
    if (!model_name.empty()) entry.name = model_name;
    if (entry.name.empty()) entry.name = std::string(display_name(entry.config.arch));
    return entry;
  }
  for (const auto& m : cfg.models) {
    if (model_name.empty() || m.name == model_name) return m;
  }
  throw UsageError("model '" + model_name + "' is not in the config; pass --model-config");
}

int run_synth(const GlobalOptions& g, int n_per_class, double duration, double rate, int speakers) {
  SynthConfig s;
  s.seed = require_seed(g);
  s.n_per_class = n_per_class;
  s.duration_s = duration;
  s.sample_rate = rate;
  s.n_speakers = speakers;
  log_resolved("synth",
               {{"n_per_class", n_per_class}, {"duration_s", duration}, {"sample_rate", rate},
                {"n_speakers", speakers}, {"seed", s.seed}, {"out_dir", g.out_dir}},
               {});
  const Manifest m = synth_corpus(s, g.out_dir);
  log("wrote " + std::to_string(m.size()) + " utterances and " + (fs::path(g.out_dir) / "manifest.jsonl").string());
  return 0;
}

int run_augment(const GlobalOptions& g, const std::string& manifest_path, const std::string& strategy,
                const std::string& snr, const std::string& factor, const std::string& mode,
                const std::string& speed_mode, bool materialize) {
  AugmentSpec spec;
  try {
    spec = AugmentSpec::parse(strategy_name(strategy, snr, factor, mode));
  } catch (const UsageError& e) {
    throw UsageError("--strategy: " + std::string(e.what()) +
                     " (strategies: noise, speed, specaug, copypaste, noaug)");
  }
  spec.seed = require_seed(g);
  const SpeedMode sm = speed_mode == "resample" ? SpeedMode::resample : SpeedMode::wsola;
  const Manifest input = read_manifest(manifest_path);
  validate_manifest(input);
  log_resolved("augment",
               {{"strategy", spec.name()}, {"seed", spec.seed}, {"speed_mode", speed_mode},
                {"materialize", materialize}, {"manifest", manifest_path}},
               {manifest_path});

  Manifest out = augment_training_set(input, spec);
  const fs::path out_dir = g.out_dir;
  fs::create_directories(out_dir / "cache");
  std::map<std::string, std::string> paths;
  for (const auto& r : input) paths[r.id] = r.path;
  std::map<std::string, Waveform> cache;
  const WaveformSource source = [&](const std::string& id) {
    auto it = cache.find(id);
    if (it == cache.end()) it = cache.emplace(id, load_wav(paths.at(id))).first;
    return it->second;
  };

  std::ofstream sidecar(out_dir / "provenance.jsonl");
  if (!sidecar) throw DataError("cannot write " + (out_dir / "provenance.jsonl").string());
  std::size_t written = 0;
  for (auto& r : out) {
    if (!r.provenance) continue;
    Provenance& p = *r.provenance;
    if (materialize && p.strategy != "specaug") {
      const fs::path wav = out_dir / "cache" / (safe_name(r.id) + ".wav");
      save_wav(wav, render_waveform(r, source, sm));
      p.out_path = fs::absolute(wav).lexically_normal().string();
      r.path = p.out_path;
      ++written;
    }
    sidecar << nlohmann::json{{"id", r.id},
                              {"out_path", p.out_path},
                              {"source_ids", p.source_ids},
                              {"strategy", p.strategy},
                              {"params", p.params},
                              {"seed", p.seed}}
                   .dump()
            << "\n";
  }
  write_manifest(out_dir / "manifest.jsonl", out);
  log(spec.name() + ": " + std::to_string(input.size()) + " -> " + std::to_string(out.size()) + " records, " +
      std::to_string(written) + " waveforms materialized");
  return 0;
}

int run_featurize(const GlobalOptions& g, const std::string& manifest_path) {
  BenchConfig cfg = g.config.empty() ? BenchConfig::parse("{}") : BenchConfig::load(g.config);
  const Manifest manifest = read_manifest(manifest_path);
  log_resolved("featurize", {{"features", cfg.features.to_json()}, {"manifest", manifest_path}},
               {manifest_path});
  const fs::path dir = fs::path(g.out_dir) / "features";
  fs::create_directories(dir);
  FeatureBank bank(manifest, cfg.features, cfg.specaug, cfg.training.speed_mode);
  std::size_t hits = 0;
  std::size_t computed = 0;
  std::ofstream index(fs::path(g.out_dir) / "features.jsonl");
  for (const auto& r : manifest) {
    const fs::path file = dir / (safe_name(r.id) + ".feat");
    auto cached = read_feature_cache(file, cfg.features);
    if (cached) {
      ++hits;
    } else {
      const FeatureMatrix fm = bank.features(r);
      write_feature_cache(file, fm, cfg.features);
      ++computed;
      cached = fm;
    }
    index << nlohmann::json{{"id", r.id}, {"features", file.string()}, {"frames", cached->frames()},
                            {"dims", cached->dims()}}
                 .dump()
          << "\n";
  }
  log("featurize: " + std::to_string(computed) + " computed, " + std::to_string(hits) +
      " cache hits (config hash " + content_hash(cfg.features.to_json()) + ")");
  return 0;
}

struct TrainArgs {
  std::string manifest;
  std::string model_config;
  std::string model_name;
  std::string augmentation = "NoAug";
  int fold = 0;
  int repeat = 0;
  int epochs = 0;
  std::string checkpoint;
};

int run_train(const GlobalOptions& g, const TrainArgs& a) {
  BenchConfig cfg = load_config(g);
  if (!a.manifest.empty()) {
    cfg.manifest = a.manifest;
    cfg.synth.reset();
  }
  if (a.epochs > 0) cfg.training.epochs = a.epochs;
  const ModelEntry model = resolve_model(cfg, a.model_config, a.model_name);
  AugmentSpec aug = AugmentSpec::parse(a.augmentation);
  aug.seed = cfg.seed;
  cfg.models = {model};
  cfg.augmentations = {aug};
  cfg.validate();
  if (a.fold < 0 || a.fold >= cfg.k) throw UsageError("--fold must lie in [0, k)");
  log_resolved("train", cfg.to_json(), {cfg.manifest});

  const Manifest corpus = prepare_corpus(cfg, g.out_dir);
  const FoldPlan plan = make_folds(corpus, cfg.k, cfg.constraint, cfg.seed);
  FeatureBank bank(corpus, cfg.features, cfg.specaug, cfg.training.speed_mode);
  TrainedModel trained{Model(model.config, 0), {}, {}, 0};
  const RunResult r = run_single(cfg, corpus, plan, model, aug, a.fold, a.repeat, bank, &trained);

  nlohmann::json bench = cfg.to_json();
  if (cfg.synth) bench["corpus"] = {{"manifest", fs::absolute(fs::path(g.out_dir) / "corpus" / "manifest.jsonl").string()}};
  const nlohmann::json extra = {{"model_name", model.name},
                                {"augmentation", aug.name()},
                                {"fold", a.fold},
                                {"repeat", a.repeat},
                                {"bench_config", bench},
                                {"norm_stats", norm_stats_to_json(trained.stats)},
                                {"classes", cfg.classes.labels},
                                {"loss_history", trained.loss_history}};
  const fs::path ckpt = a.checkpoint.empty() ? fs::path(g.out_dir) / "model.ckpt" : fs::path(a.checkpoint);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(ckpt, trained.model, cfg.training.epochs, extra);
  log("trained " + model.name + " / " + aug.name() + " fold " + std::to_string(a.fold) + " repeat " +
      std::to_string(a.repeat) + ": final loss " + std::to_string(trained.loss_history.back()) +
      ", held-out UA " + std::to_string(r.ua));
  log("checkpoint written to " + ckpt.string());
  return 0;
}

int run_evaluate(const GlobalOptions& g, const std::string& checkpoint, const std::string& manifest) {
  Checkpoint ckpt = load_checkpoint(checkpoint);
  const nlohmann::json& extra = ckpt.extra;
  if (!extra.contains("bench_config")) throw DataError(checkpoint + ": checkpoint lacks evaluation metadata");
  BenchConfig cfg = BenchConfig::parse(extra.at("bench_config").dump());
  if (!manifest.empty()) cfg.manifest = manifest;
  cfg.has_seed = true;
  log_resolved("evaluate", cfg.to_json(), {checkpoint, cfg.manifest});

  const Manifest corpus = prepare_corpus(cfg, g.out_dir);
  const FoldPlan plan = make_folds(corpus, cfg.k, cfg.constraint, cfg.seed);
  const int fold = extra.at("fold").get<int>();
  const auto [train_set, test_set] = split_fold(corpus, plan, fold);
  FeatureBank bank(corpus, cfg.features, cfg.specaug, cfg.training.speed_mode);

  RunResult r;
  r.model = extra.at("model_name").get<std::string>();
  r.augmentation = extra.at("augmentation").get<std::string>();
  r.fold = fold;
  r.repeat = extra.value("repeat", 0);
  r.confusion = evaluate(ckpt.model, norm_stats_from_json(extra.at("norm_stats")), test_set, bank, cfg.classes);
  r.ua = uar(r.confusion);
  r.weighted_f1 = weighted_f1(r.confusion);
  fs::create_directories(g.out_dir);
  write_results_csv(fs::path(g.out_dir) / "results.csv", {r});
  log("evaluate: UA " + std::to_string(r.ua) + ", weighted F1 " + std::to_string(r.weighted_f1) + " on " +
      std::to_string(test_set.size()) + " held-out utterances");
  return 0;
}

int run_report(const GlobalOptions& g, const std::string& results) {
  const fs::path csv = results.empty() ? fs::path(g.out_dir) / "results.csv" : fs::path(results);
  const EvalReport report = report_from_csv(csv, ClassSet{}.labels);
  log("report: " + std::to_string(report.runs.size()) + " runs, " + std::to_string(report.models.size()) + " x " +
      std::to_string(report.augmentations.size()) + " cells written next to " + csv.string());
  return 0;
}

int run_bench(const GlobalOptions& g) {
  if (g.config.empty()) throw UsageError("bench requires --config");
  const BenchConfig cfg = load_config(g);
  cfg.validate();
  log_resolved("bench", cfg.to_json(), {g.config, cfg.manifest});
  fs::create_directories(g.out_dir);
  {
    std::ofstream out(fs::path(g.out_dir) / "resolved_config.json");
    out << cfg.to_json().dump(2) << "\n";
  }
  const EvalReport report = run_benchmark(cfg, g.out_dir, g.jobs);
  emit_report(report, g.out_dir);
  std::size_t failed = 0;
  for (const auto& r : report.runs) failed += r.ok() ? 0 : 1;
  log("bench: " + std::to_string(report.models.size()) + " models x " + std::to_string(report.augmentations.size()) +
      " augmentations, " + std::to_string(report.runs.size()) + " runs (" + std::to_string(failed) +
      " failed); outputs in " + g.out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speech emotion recognition benchmark"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--seed", g.seed, "Global seed (integer) or 'auto'");
  app.add_option("--config", g.config, "Benchmark configuration JSON");
  app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Parallel runs")->check(CLI::PositiveNumber)->capture_default_str();

  auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus");
  int n_per_class = 100;
  double duration = 1.0;
  double rate = 16000.0;
  int speakers = 10;
  synth->add_option("--n-per-class", n_per_class)->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--duration", duration, "Seconds per utterance")->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--rate", rate, "Sample rate (Hz)")->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--speakers", speakers)->check(CLI::PositiveNumber)->capture_default_str();

  auto* augment = app.add_subcommand("augment", "Augment a manifest");
  std::string aug_manifest;
  std::string strategy;
  std::string snr = "20";
  std::string factor = "0.9";
  std::string mode = "TF";
  std::string speed_mode = "wsola";
  bool no_materialize = false;
  augment->add_option("--manifest", aug_manifest)->required();
  augment->add_option("--strategy", strategy, "noise | specaug | speed | copypaste | noaug")->required();
  augment->add_option("--snr", snr, "Noise SNR in dB")->capture_default_str();
  augment->add_option("--factor", factor, "Speed factor or 'mixed'")->capture_default_str();
  augment->add_option("--mode", mode, "SpecAug mode T | F | TF")->capture_default_str();
  augment->add_option("--speed-mode", speed_mode)->check(CLI::IsMember({"wsola", "resample"}))->capture_default_str();
  augment->add_flag("--no-materialize", no_materialize, "Do not write augmented WAVs");

  auto* featurize = app.add_subcommand("featurize", "Extract and cache features");
  std::string feat_manifest;
  featurize->add_option("--manifest", feat_manifest)->required();

  auto* train_cmd = app.add_subcommand("train", "Train one model on one fold");
  TrainArgs ta;
  train_cmd->add_option("--manifest", ta.manifest);
  train_cmd->add_option("--model-config", ta.model_config, "JSON file or architecture name");
  train_cmd->add_option("--model-name", ta.model_name);
  train_cmd->add_option("--augmentation", ta.augmentation)->capture_default_str();
  train_cmd->add_option("--fold", ta.fold)->capture_default_str();
  train_cmd->add_option("--repeat", ta.repeat)->capture_default_str();
  train_cmd->add_option("--epochs", ta.epochs, "Override training.epochs");
  train_cmd->add_option("--checkpoint", ta.checkpoint, "Output checkpoint path");

  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on its held-out fold");
  std::string eval_ckpt;
  std::string eval_manifest;
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--manifest", eval_manifest);

  auto* report_cmd = app.add_subcommand("report", "Regenerate summary and heatmaps from results.csv");
  std::string results;
  report_cmd->add_option("--results", results, "results.csv (default <out-dir>/results.csv)");

  app.add_subcommand("bench", "Run the benchmark grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return run_synth(g, n_per_class, duration, rate, speakers);
    if (*augment) return run_augment(g, aug_manifest, strategy, snr, factor, mode, speed_mode, !no_materialize);
    if (*featurize) return run_featurize(g, feat_manifest);
    if (*train_cmd) return run_train(g, ta);
    if (*eval_cmd) return run_evaluate(g, eval_ckpt, eval_manifest);
    if (*report_cmd) return run_report(g, results);
    return run_bench(g);
  } catch (const UsageError& e) {
    std::clog << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::clog << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::clog << "data error: " << e.what() << "\n";
    return 2;
  }
}
