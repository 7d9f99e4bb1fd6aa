#include <doctest.h>

#include <fstream>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "serbench/benchmark.hpp"
#include "serbench/error.hpp"
#include "serbench/folds.hpp"
#include "serbench/metrics.hpp"
#include "serbench/report.hpp"
#include "serbench/synth.hpp"
#include "serbench/training.hpp"

using namespace serbench;

namespace {

ManifestRecord rec(std::string id, std::string label, std::string group, std::optional<char> gender = {}) {
  ManifestRecord r;
  r.id = std::move(id);
  r.path = r.id + ".wav";
  r.label = std::move(label);
  r.speaker = group;
  r.group = std::move(group);
  r.gender = gender;
  return r;
}

Manifest grouped_manifest(int groups, int per_group) {
  static const char* labels[] = {"neutral", "angry", "sad", "happy"};
  Manifest m;
  for (int g = 0; g < groups; ++g) {
    for (int i = 0; i < per_group; ++i) {
      m.push_back(rec("g" + std::to_string(g) + "_" + std::to_string(i), labels[i % 4], "g" + std::to_string(g),
                      g % 2 == 0 ? 'M' : 'F'));
    }
  }
  return m;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

ModelConfig small_cnn() {
  ModelConfig cfg = ModelConfig::defaults(Architecture::gated_cnn);
  cfg.n_layers = 1;
  cfg.n_kernels = 8;
  cfg.kernel_width = 3;
  cfg.final_nodes = 8;
  return cfg;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("manifest round trip, validation and agreement filter") {
    const auto dir = oracle::temp_dir("manifest");
    Manifest m{rec("a", "neutral", "s1", 'M'), rec("b", "sad", "s2", 'F')};
    m[0].rater_agreement = 0.4;
    m[1].rater_agreement = 0.9;
    m[1].provenance = Provenance{"noise", {"a"}, {{"snr_db", 10.0}}, 17, {}};
    write_manifest(dir / "m.jsonl", m);
    const Manifest back = read_manifest(dir / "m.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[1].path == (dir / "b.wav").string());
    ManifestRecord resolved = back[1];
    resolved.path = m[1].path;
    CHECK(to_json(resolved).dump() == to_json(m[1]).dump());

    CHECK(filter_by_agreement(m, 0.5).size() == 1);
    CHECK(filter_by_agreement(m, 0.0).size() == 2);
    CHECK(filter_by_agreement(m, 1.0).empty());
    CHECK_THROWS_AS(filter_by_agreement(m, 1.5), UsageError);

    Manifest dup{rec("a", "neutral", "s"), rec("a", "sad", "s")};
    CHECK_THROWS_AS(validate_manifest(dup), DataError);
    CHECK_THROWS_AS(validate_manifest({rec("x", "bored", "s")}), DataError);

    std::ofstream(dir / "bad.jsonl") << to_json(m[0]).dump() << "\n{\"id\": 3}\n";
    try {
      read_manifest(dir / "bad.jsonl");
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
    CHECK(source_closure(m[1]) == std::vector<std::string>{"a"});
    CHECK(source_closure(m[0]) == std::vector<std::string>{"a"});
  }

  TEST_CASE("folds partition groups with the expected sizes") {
    const Manifest m = grouped_manifest(91, 2);
    const FoldPlan plan = make_folds(m, 5, FoldConstraint::none, 7);
    std::multiset<std::size_t> sizes;
    std::set<std::string> seen;
    for (const auto& fold : plan.folds()) {
      sizes.insert(fold.size());
      for (const auto& g : fold) CHECK(seen.insert(g).second);
    }
    CHECK(seen.size() == 91);
    CHECK(sizes == std::multiset<std::size_t>{18, 18, 18, 18, 19});
    CHECK(make_folds(m, 5, FoldConstraint::none, 7).assignment == plan.assignment);

    const Manifest sessions = grouped_manifest(5, 4);
    for (const auto& fold : make_folds(sessions, 5, FoldConstraint::none, 1).folds()) CHECK(fold.size() == 1);

    const Manifest paired = grouped_manifest(10, 4);
    const FoldPlan pp = make_folds(paired, 5, FoldConstraint::pair_by_gender, 3);
    for (const auto& fold : pp.folds()) {
      REQUIRE(fold.size() == 2);
      const int a = std::stoi(fold[0].substr(1)), b = std::stoi(fold[1].substr(1));
      CHECK((a % 2) != (b % 2));
    }
    CHECK_THROWS_AS(make_folds(grouped_manifest(3, 2), 5, FoldConstraint::none, 1), DataError);
    CHECK_THROWS_AS(make_folds(grouped_manifest(9, 2), 4, FoldConstraint::pair_by_gender, 1), DataError);

    const auto [train, test] = split_fold(paired, pp, 2);
    CHECK(train.size() + test.size() == paired.size());
    for (const auto& r : test) CHECK(pp.fold_of(r.group) == 2);
    for (const auto& r : train) CHECK(pp.fold_of(r.group) != 2);
  }

  TEST_CASE("leakage guard follows provenance") {
    Manifest train{rec("a", "neutral", "s1"), rec("b", "angry", "s1")};
    const Manifest test{rec("c", "sad", "s2")};
    CHECK_NOTHROW(check_no_leakage(train, test));
    ManifestRecord derived = rec("b+c", "angry", "s1");
    derived.provenance = Provenance{"copy_paste", {"a", "c"}, {}, 1, {}};
    train.push_back(derived);
    CHECK_THROWS_AS(check_no_leakage(train, test), DataError);
    CHECK_THROWS_AS(check_no_leakage({rec("c", "sad", "s2")}, test), DataError);
  }

  TEST_CASE("confusion matrix and metrics") {
    const std::vector<int> truth{0, 0, 1}, pred{0, 1, 1};
    const ConfusionMatrix cm = confusion_matrix(pred, truth, 2);
    CHECK(cm(0, 0) == 1);
    CHECK(cm(0, 1) == 1);
    CHECK(cm(1, 0) == 0);
    CHECK(cm(1, 1) == 1);
    CHECK_THROWS_AS(confusion_matrix(std::vector<int>{0, 2}, std::vector<int>{0, 1}, 2), DataError);
    CHECK_THROWS_AS(confusion_matrix(std::vector<int>{0}, std::vector<int>{0, 1}, 2), DataError);

    ConfusionMatrix hand(2, 2);
    hand << 5, 5, 2, 8;
    CHECK(uar(hand) == doctest::Approx(0.65).epsilon(1e-15));
    // Per-class enumeration: precision 5/7, 8/13; recall 0.5, 0.8.
    const double f1_0 = 2.0 * (5.0 / 7) * 0.5 / (5.0 / 7 + 0.5);
    const double f1_1 = 2.0 * (8.0 / 13) * 0.8 / (8.0 / 13 + 0.8);
    CHECK(weighted_f1(hand) == doctest::Approx(0.5 * f1_0 + 0.5 * f1_1).epsilon(1e-15));

    const ConfusionMatrix eye = ConfusionMatrix::Identity(4, 4) * 3;
    CHECK(uar(eye) == 1.0);
    CHECK(weighted_f1(eye) == 1.0);

    ConfusionMatrix one_class = ConfusionMatrix::Zero(4, 4);
    one_class.col(0).setConstant(10);
    CHECK(uar(one_class) == 0.25);
    CHECK(weighted_f1(one_class) < uar(one_class));
    CHECK(weighted_f1(one_class) == doctest::Approx(0.25 * 2.0 * 0.25 / 1.25));

    ConfusionMatrix empty_row = eye;
    empty_row.row(2).setZero();
    CHECK_THROWS_AS(uar(empty_row), DataError);
    CHECK_THROWS_AS(weighted_f1(ConfusionMatrix::Zero(3, 3)), DataError);

    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> pick(0, 3);
    std::vector<int> t, p;
    for (int i = 0; i < 4000; ++i) {
      t.push_back(i % 4);
      p.push_back(pick(rng));
    }
    CHECK(std::abs(uar(confusion_matrix(p, t, 4)) - 0.25) < 0.05);
  }

  TEST_CASE("metrics agree with enumeration on random small-count matrices") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> count(0, 5);
    int checked = 0;
    for (int trial = 0; trial < 20000; ++trial) {
      Eigen::Matrix<std::int64_t, 4, 4> cm;
      for (int i = 0; i < 16; ++i) cm(i) = count(rng);
      if (cm.sum() == 0) continue;
      CHECK(weighted_f1(cm) == oracle::weighted_f1(cm));
      if ((cm.rowwise().sum().array() > 0).all()) {
        CHECK(uar(cm) == oracle::uar(cm));
        ++checked;
      }
    }
    CHECK(checked > 10000);
  }

  TEST_CASE("synthetic corpus is deterministic, balanced and learnable") {
    const auto dir = oracle::temp_dir("synth");
    SynthConfig cfg;
    cfg.n_per_class = 40;
    cfg.seed = 5;
    const Manifest m = synth_corpus(cfg, dir / "a");
    CHECK(m.size() == 160);
    CHECK(class_histogram(m) == std::vector<int>{40, 40, 40, 40});
    CHECK_NOTHROW(validate_manifest(m));
    const Manifest again = synth_corpus(cfg, dir / "b");
    CHECK(slurp(m.front().path) == slurp(again.front().path));
    CHECK(slurp(m.back().path) == slurp(again.back().path));
    SynthConfig other = cfg;
    other.seed = 6;
    CHECK(slurp(synth_corpus(other, dir / "c").front().path) != slurp(m.front().path));
    CHECK(synth_utterance(1, 0, 3, cfg).samples == synth_utterance(1, 0, 3, cfg).samples);

    // Softmax regression on utterance-mean log-mel features, trained by
    // plain gradient descent: train on even speakers, test on odd ones.
    const MelConfig mel;
    std::vector<Eigen::VectorXd> xs;
    std::vector<int> ys;
    std::vector<bool> is_train;
    const ClassSet classes;
    for (const auto& r : m) {
      Waveform w = load_wav(r.path);
      Eigen::VectorXd f(24);
      f.head(23) = extract(w, mel).values.colwise().mean().transpose();
      f[23] = 1.0;
      xs.push_back(f);
      ys.push_back(classes.index_of(r.label));
      is_train.push_back(std::stoi(r.speaker.substr(3)) % 2 == 0);
    }
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(24), sd = Eigen::VectorXd::Zero(24);
    for (const auto& x : xs) mu += x / static_cast<double>(xs.size());
    for (const auto& x : xs) sd += (x - mu).cwiseAbs2() / static_cast<double>(xs.size());
    sd = sd.cwiseSqrt();
    mu[23] = 0.0;
    sd[23] = 1.0;
    for (auto& x : xs) x = (x - mu).cwiseQuotient(sd.cwiseMax(1e-9));
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(4, 24);
    for (int it = 0; it < 300; ++it) {
      Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(4, 24);
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!is_train[i]) continue;
        Eigen::VectorXd z = w * xs[i];
        z = (z.array() - z.maxCoeff()).exp();
        z /= z.sum();
        z[ys[i]] -= 1.0;
        grad += z * xs[i].transpose();
      }
      w -= 0.01 * grad;
    }
    int correct = 0, total = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (is_train[i]) continue;
      Eigen::Index best = 0;
      (w * xs[i]).maxCoeff(&best);
      correct += static_cast<int>(best) == ys[i];
      ++total;
    }
    CHECK(static_cast<double>(correct) / total > 0.40);
  }

  TEST_CASE("training is deterministic and reduces the loss") {
    const auto dir = oracle::temp_dir("train");
    SynthConfig sc;
    sc.n_per_class = 8;
    sc.duration_s = 0.5;
    sc.seed = 2;
    const Manifest corpus = synth_corpus(sc, dir);
    FeatureBank bank(corpus, MelConfig{}, SpecAugPolicy{});
    TrainConfig tc;
    tc.epochs = 4;
    const AugmentSpec none;
    const TrainedModel a = train(small_cnn(), corpus, none, tc, bank, 9);
    const TrainedModel b = train(small_cnn(), corpus, none, tc, bank, 9);
    CHECK(a.loss_history == b.loss_history);
    for (std::size_t i = 0; i < a.model.parameter_list().size(); ++i) {
      CHECK(a.model.parameter_list()[i].value == b.model.parameter_list()[i].value);
    }
    CHECK(a.loss_history.back() < a.loss_history.front());
    CHECK(a.training_records == corpus.size());
    const ConfusionMatrix cm = evaluate(a.model, a.stats, corpus, bank);
    CHECK(cm.sum() == static_cast<std::int64_t>(corpus.size()));
    CHECK(cm.rowwise().sum() == Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>::Constant(4, 8));

    AugmentSpec cp = AugmentSpec::parse("CopyPaste");
    Manifest skewed;
    for (const auto& r : corpus) {
      if (r.label != "happy" || skewed.size() % 2 == 0) skewed.push_back(r);
    }
    const TrainedModel balanced = train(small_cnn(), skewed, cp, tc, bank, 9);
    CHECK(balanced.training_records > skewed.size());

    CHECK_THROWS_AS(train(small_cnn(), {}, none, tc, bank, 1), DataError);
    const NormStats back = norm_stats_from_json(norm_stats_to_json(a.stats));
    CHECK(back.mean == a.stats.mean);
    CHECK(back.stddev == a.stats.stddev);
  }

  TEST_CASE("training config parsing") {
    const TrainConfig tc = TrainConfig::from_json({{"epochs", 3}, {"schedule", {{"policy", "step_decay"}, {"gamma", 0.9}}}});
    CHECK(tc.epochs == 3);
    CHECK(tc.resolved_schedule(Architecture::gated_cnn).gamma == 0.9);
    CHECK(TrainConfig{}.resolved_schedule(Architecture::transformer).policy == LrSchedule::Policy::step_decay);
    CHECK(TrainConfig{}.resolved_schedule(Architecture::bilstm).policy == LrSchedule::Policy::fixed);
    CHECK_THROWS_AS(TrainConfig::from_json({{"epochz", 3}}), UsageError);
    CHECK_THROWS_AS(TrainConfig::from_json({{"epochs", 0}}), UsageError);
  }

  TEST_CASE("bench config errors name the field and line") {
    const std::string text = "{\n  \"seed\": 1,\n  \"corpus\": {\"manifest\": \"m.jsonl\"},\n  \"folds\": {\n    \"k\": 5,\n"
                             "    \"group_bye\": \"speaker\"\n  }\n}\n";
    try {
      BenchConfig::parse(text);
      FAIL("expected an error");
    } catch (const UsageError& e) {
      const std::string what = e.what();
      CHECK(what.find("'folds.group_bye'") != std::string::npos);
      CHECK(what.find("line 6") != std::string::npos);
    }
    const std::string bad_model = "{\"seed\": 1,\n \"corpus\": {\"manifest\": \"m\"},\n"
                                  " \"models\": [\n  {\"arch\": \"bilstm\",\n   \"cells\": 4}]}";
    try {
      BenchConfig::parse(bad_model);
      FAIL("expected an error");
    } catch (const UsageError& e) {
      const std::string what = e.what();
      CHECK(what.find("'models.cells'") != std::string::npos);
      CHECK(what.find("line 5") != std::string::npos);
    }
    CHECK_THROWS_AS(BenchConfig::parse("{\"seed\": 1,\n \"corpus\": {\n"), UsageError);

    const BenchConfig cfg = BenchConfig::parse("{\"seed\": 4, \"corpus\": {\"synth\": {\"n_per_class\": 3}}}");
    CHECK(cfg.models.size() == 4);
    CHECK(cfg.augmentations.size() == 11);
    CHECK(cfg.synth->seed == 4);
    CHECK_NOTHROW(cfg.validate());
    const BenchConfig again = BenchConfig::parse(cfg.to_json().dump(2));
    CHECK(again.to_json() == cfg.to_json());
    CHECK_THROWS_AS(BenchConfig::parse("{\"corpus\": {\"manifest\": \"m\"}}").validate(), UsageError);
  }

  TEST_CASE("report files are consistent with the runs") {
    const auto dir = oracle::temp_dir("report");
    std::vector<RunResult> runs;
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> count(1, 9);
    for (const char* model : {"Gated-CNN", "Bi-LSTM"}) {
      for (const char* aug : {"NoAug", "Speed(0.9)"}) {
        for (int fold = 0; fold < 3; ++fold) {
          RunResult r{model, aug, fold, 0, 0.0, 0.0, ConfusionMatrix(4, 4), ""};
          for (int i = 0; i < 16; ++i) r.confusion(i) = count(rng);
          r.ua = uar(r.confusion);
          r.weighted_f1 = weighted_f1(r.confusion);
          runs.push_back(r);
        }
      }
    }
    runs[4].error = "non-finite loss";
    runs[4].ua = runs[4].weighted_f1 = std::nan("");
    const EvalReport report = EvalReport::from_runs(runs, ClassSet{}.labels);
    emit_report(report, dir);

    const std::vector<RunResult> back = read_results_csv(dir / "results.csv");
    REQUIRE(back.size() == runs.size());
    for (std::size_t i = 0; i < runs.size(); ++i) {
      CHECK(back[i].model == runs[i].model);
      CHECK(back[i].augmentation == runs[i].augmentation);
      CHECK(back[i].error == runs[i].error);
      if (runs[i].ok()) {
        CHECK(back[i].ua == runs[i].ua);
        CHECK(back[i].confusion == runs[i].confusion);
      }
    }

    const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
    REQUIRE(summary.at("cells").size() == 4);
    for (const auto& cell : summary.at("cells")) {
      std::vector<double> ua;
      for (const auto& r : back) {
        if (r.model == cell.at("model") && r.augmentation == cell.at("augmentation") && r.ok()) ua.push_back(r.ua);
      }
      double mean = 0.0;
      for (double v : ua) mean += v;
      mean /= static_cast<double>(ua.size());
      double ss = 0.0;
      for (double v : ua) ss += (v - mean) * (v - mean);
      CHECK(cell.at("ua_mean").get<double>() == mean);
      CHECK(cell.at("ua_std").get<double>() == doctest::Approx(std::sqrt(ss / (ua.size() - 1))).epsilon(1e-14));
      CHECK(cell.at("runs").get<int>() == 3);
      CHECK(cell.at("runs").get<int>() - cell.at("failed").get<int>() == static_cast<int>(ua.size()));
    }
    CHECK(summary.at("cells")[1].at("failed") == 1);

    const auto cells = report.cells();
    const std::string svg = slurp(dir / "heatmaps" / heatmap_file_name("Gated-CNN", "NoAug"));
    const std::regex annotation("data-row=\"(\\d)\" data-col=\"(\\d)\"[^>]*>(\\d+)<");
    int annotated = 0;
    for (std::sregex_iterator it(svg.begin(), svg.end(), annotation), end; it != end; ++it) {
      const int r = std::stoi((*it)[1]), c = std::stoi((*it)[2]);
      CHECK(std::stoll((*it)[3]) == cells[0].confusion(r, c));
      ++annotated;
    }
    CHECK(annotated == 16);
    CHECK(slurp(dir / "summary.md").find("Gated-CNN") != std::string::npos);

    std::filesystem::remove_all(dir / "heatmaps");
    std::filesystem::remove(dir / "summary.json");
    report_from_csv(dir / "results.csv", ClassSet{}.labels);
    CHECK(slurp(dir / "heatmaps" / heatmap_file_name("Gated-CNN", "NoAug")) == svg);
    CHECK(nlohmann::json::parse(slurp(dir / "summary.json")) == summary);
    CHECK_THROWS_AS(emit_report(EvalReport{}, dir), DataError);
  }
}
