#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "serbench/manifest.hpp"
#include "serbench/report.hpp"

#ifndef SERBENCH_CLI_PATH
#error "SERBENCH_CLI_PATH must point at the serbench executable"
#endif

namespace fs = std::filesystem;
using namespace serbench;

namespace {

struct Outcome {
  int code = -1;
  std::string log;
};

Outcome run(const fs::path& dir, const std::string& args) {
  const fs::path log = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + SERBENCH_CLI_PATH + "\" " + args + " > /dev/null 2> \"" +
                          log.string() + "\"";
  const int status = std::system(cmd.c_str());
  Outcome out;
  out.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream s;
  s << in.rdbuf();
  out.log = s.str();
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kTinyModels = R"([
    {"arch": "gated_cnn", "n_layers": 1, "n_kernels": 8, "kernel_width": 3, "final_nodes": 8},
    {"arch": "transformer", "n_layers": 1, "d_model": 8, "n_heads": 2, "final_nodes": 8}
  ])";

std::string tiny_bench(const std::string& corpus_manifest) {
  return std::string("{\n  \"seed\": 21,\n  \"corpus\": {\"manifest\": \"") + corpus_manifest +
         "\"},\n  \"models\": " + kTinyModels +
         ",\n  \"augmentations\": [\"NoAug\", \"Noise(20db)\"],\n  \"folds\": {\"k\": 2},\n"
         "  \"training\": {\"epochs\": 2}\n}\n";
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("seed requirement, usage errors and exit codes") {
    const auto dir = oracle::temp_dir("cli_errors");
    Outcome o = run(dir, "--out-dir \"" + (dir / "c").string() + "\" synth --n-per-class 1");
    CHECK(o.code == 1);
    CHECK(o.log.find("seed") != std::string::npos);
    CHECK(run(dir, "").code == 1);
    CHECK(run(dir, "--help").code == 0);
    CHECK(run(dir, "--seed x synth").code == 1);

    o = run(dir, "--seed 1 augment --manifest \"" + (dir / "missing.jsonl").string() + "\" --strategy noise");
    CHECK(o.code == 2);

    o = run(dir, "--seed 1 --out-dir \"" + (dir / "auto").string() + "\" synth --n-per-class 1 --duration 0.1");
    CHECK(o.code == 0);
    o = run(dir, "--seed 1 --out-dir \"" + dir.string() + "\" augment --manifest \"" +
                     (dir / "auto" / "manifest.jsonl").string() + "\" --strategy reverb");
    CHECK(o.code == 1);
    CHECK(o.log.find("noise") != std::string::npos);
    CHECK(o.log.find("copypaste") != std::string::npos);

    CHECK(run(dir, "--seed auto --out-dir \"" + (dir / "auto2").string() + "\" synth --n-per-class 1 --duration 0.1")
              .log.find("resolved to") != std::string::npos);
    CHECK(run(dir, "--seed 1 bench").code == 1);

    write(dir / "bad.json", "{\n  \"seed\": 1,\n  \"corpus\": {\"manifest\": \"x\"},\n  \"trainin\": {}\n}\n");
    o = run(dir, "--config \"" + (dir / "bad.json").string() + "\" --out-dir \"" + dir.string() + "\" bench");
    CHECK(o.code == 1);
    CHECK(o.log.find("'trainin'") != std::string::npos);
    CHECK(o.log.find("line 4") != std::string::npos);
  }

  TEST_CASE("synth and augment") {
    const auto dir = oracle::temp_dir("cli_synth");
    const std::string corpus = (dir / "new" / "corpus").string();
    REQUIRE(run(dir, "--seed 4 --out-dir \"" + corpus + "\" synth --n-per-class 3 --duration 0.3").code == 0);
    const Manifest m = read_manifest(fs::path(corpus) / "manifest.jsonl");
    CHECK(m.size() == 12);
    std::string first = slurp(m.front().path);
    REQUIRE(run(dir, "--seed 4 --out-dir \"" + corpus + "\" synth --n-per-class 3 --duration 0.3").code == 0);
    CHECK(slurp(m.front().path) == first);
    Outcome o = run(dir, "--seed 4 --out-dir \"" + corpus + "\" synth --n-per-class 3 --duration 0.3");
    CHECK(o.log.find("content hash") != std::string::npos);

    const std::string manifest = (fs::path(corpus) / "manifest.jsonl").string();
    REQUIRE(run(dir, "--seed 4 --out-dir \"" + (dir / "speed").string() + "\" augment --manifest \"" + manifest +
                         "\" --strategy speed --factor mixed")
                .code == 0);
    const Manifest sped = read_manifest(dir / "speed" / "manifest.jsonl");
    CHECK(sped.size() == 36);
    CHECK(fs::exists(sped.back().provenance->out_path));

    REQUIRE(run(dir, "--seed 4 --out-dir \"" + (dir / "noise").string() + "\" augment --manifest \"" + manifest +
                         "\" --strategy noise --snr 20")
                .code == 0);
    const Manifest noisy = read_manifest(dir / "noise" / "manifest.jsonl");
    CHECK(noisy.size() == 24);
    CHECK(noisy.back().provenance->params.at("snr_db").get<double>() == 20.0);
    CHECK(fs::exists(dir / "noise" / "provenance.jsonl"));

    REQUIRE(run(dir, "--seed 4 --out-dir \"" + (dir / "feat").string() + "\" featurize --manifest \"" + manifest + "\"")
                .code == 0);
    o = run(dir, "--seed 4 --out-dir \"" + (dir / "feat").string() + "\" featurize --manifest \"" + manifest + "\"");
    CHECK(o.code == 0);
    CHECK(o.log.find("0 computed") != std::string::npos);
    CHECK(o.log.find("12 cache hits") != std::string::npos);
  }

  TEST_CASE("bench is independent of --jobs and train/evaluate reproduce a cell") {
    const auto dir = oracle::temp_dir("cli_bench");
    const std::string corpus = (dir / "corpus").string();
    REQUIRE(run(dir, "--seed 8 --out-dir \"" + corpus + "\" synth --n-per-class 6 --duration 0.4 --speakers 4").code == 0);
    write(dir / "bench.json", tiny_bench((fs::path(corpus) / "manifest.jsonl").string()));
    const std::string config = "--config \"" + (dir / "bench.json").string() + "\"";

    REQUIRE(run(dir, config + " --jobs 1 --out-dir \"" + (dir / "j1").string() + "\" bench").code == 0);
    REQUIRE(run(dir, config + " --jobs 3 --out-dir \"" + (dir / "j3").string() + "\" bench").code == 0);
    const std::string csv = slurp(dir / "j1" / "results.csv");
    CHECK(csv == slurp(dir / "j3" / "results.csv"));
    const auto runs = read_results_csv(dir / "j1" / "results.csv");
    CHECK(runs.size() == 2 * 2 * 2);
    CHECK(fs::exists(dir / "j1" / "summary.json"));
    CHECK(fs::exists(dir / "j1" / "resolved_config.json"));

    // Standalone train + evaluate of the Transformer / Noise(20db) / fold 1 cell.
    const std::string ckpt = (dir / "t" / "model.ckpt").string();
    REQUIRE(run(dir, config + " --out-dir \"" + (dir / "t").string() +
                         "\" train --model-name Transformer --augmentation \"Noise(20db)\" --fold 1 --checkpoint \"" +
                         ckpt + "\"")
                .code == 0);
    REQUIRE(run(dir, "--out-dir \"" + (dir / "e").string() + "\" evaluate --checkpoint \"" + ckpt + "\"").code == 0);
    const auto single = read_results_csv(dir / "e" / "results.csv");
    REQUIRE(single.size() == 1);
    bool matched = false;
    for (const auto& r : runs) {
      if (r.model == "Transformer" && r.augmentation == "Noise(20db)" && r.fold == 1) {
        CHECK(r.ua == single[0].ua);
        CHECK(r.weighted_f1 == single[0].weighted_f1);
        CHECK(r.confusion == single[0].confusion);
        matched = true;
      }
    }
    CHECK(matched);

    // report regenerates the derived files from results.csv alone.
    fs::create_directories(dir / "r");
    fs::copy_file(dir / "j1" / "results.csv", dir / "r" / "results.csv");
    REQUIRE(run(dir, "--out-dir \"" + (dir / "r").string() + "\" report").code == 0);
    for (const auto& entry : fs::directory_iterator(dir / "j1" / "heatmaps")) {
      CHECK(slurp(entry.path()) == slurp(dir / "r" / "heatmaps" / entry.path().filename()));
    }
    CHECK(slurp(dir / "r" / "summary.json") == slurp(dir / "j1" / "summary.json"));
  }
}
