#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "serbench/error.hpp"
#include "serbench/grad_check.hpp"
#include "serbench/models.hpp"
#include "serbench/ops.hpp"
#include "serbench/optim.hpp"

using namespace serbench;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

Matrix ln_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) mean += x(r, c);
    mean /= static_cast<double>(x.cols());
    double var = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<double>(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean) / std::sqrt(var + 1e-10);
  }
  return out;
}

double gelu_ref(double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); }

Matrix apply(const Matrix& m, double (*f)(double)) {
  Matrix out = m;
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = f(out.data()[i]);
  return out;
}

ModelConfig tiny(Architecture arch) {
  ModelConfig cfg = ModelConfig::defaults(arch);
  cfg.input_dim = 3;
  cfg.n_classes = 3;
  cfg.n_layers = 2;
  switch (arch) {
    case Architecture::gated_cnn:
      cfg.n_kernels = 4;
      cfg.kernel_width = 3;
      cfg.final_nodes = 5;
      break;
    case Architecture::mlp_mixer:
      cfg.fixed_T = 8;
      cfg.patch_t = 2;
      cfg.final_nodes = 4;
      break;
    case Architecture::bilstm:
      cfg.lstm_cells = 3;
      cfg.final_nodes = 4;
      break;
    case Architecture::transformer:
      cfg.d_model = 4;
      cfg.n_heads = 2;
      cfg.final_nodes = 6;
      break;
  }
  return cfg;
}

constexpr Architecture kAll[] = {Architecture::gated_cnn, Architecture::mlp_mixer, Architecture::bilstm,
                                 Architecture::transformer};

}  // namespace

TEST_SUITE("models") {
  TEST_CASE("gated convolution layer") {
    Tape tape;
    Matrix s(2, 1);
    s << 1.0, 2.0;
    const Tensor st = tape.constant(s);
    const Tensor pre = hadamard(conv1d(st, tape.constant(Matrix::Constant(1, 1, 2.0))),
                                sigmoid(conv1d(st, tape.constant(Matrix::Zero(1, 1)))));
    CHECK(pre.value()(0, 0) == 1.0);
    CHECK(pre.value()(1, 0) == 2.0);

    std::mt19937_64 rng(4);
    const Matrix x = random_matrix(8, 4, rng);
    const Matrix ws = random_matrix(3 * 4, 5, rng);
    const Matrix wg = random_matrix(3 * 4, 5, rng);
    const Tensor ones = tape.constant(Matrix::Ones(1, 5));
    const Tensor zeros = tape.constant(Matrix::Zero(1, 5));
    const Matrix out =
        gated_conv_layer(tape.constant(x), tape.constant(ws), tape.constant(wg), ones, zeros).value();

    // Explicit same-padded correlation and gating.
    Matrix conv_s = Matrix::Zero(8, 5), conv_g = Matrix::Zero(8, 5);
    for (int t = 0; t < 8; ++t) {
      for (int j = 0; j < 3; ++j) {
        const int src = t + j - 1;
        if (src < 0 || src >= 8) continue;
        for (int c = 0; c < 4; ++c) {
          for (int k = 0; k < 5; ++k) {
            conv_s(t, k) += x(src, c) * ws(j * 4 + c, k);
            conv_g(t, k) += x(src, c) * wg(j * 4 + c, k);
          }
        }
      }
    }
    Matrix gated(8, 5);
    for (Eigen::Index i = 0; i < gated.size(); ++i) gated(i) = conv_s(i) / (1.0 + std::exp(-conv_g(i)));
    CHECK((out - ln_rows(gated)).cwiseAbs().maxCoeff() < 1e-10);

    const Matrix half =
        gated_conv_layer(tape.constant(x), tape.constant(ws), tape.constant(Matrix::Zero(12, 5)), ones, zeros)
            .value();
    CHECK((half - ln_rows(0.5 * conv_s)).cwiseAbs().maxCoeff() < 1e-10);

    const Matrix gamma = random_matrix(1, 5, rng), beta = random_matrix(1, 5, rng);
    CHECK(grad_check([&](Tape& t, const Tensor& in) {
      return sum(hadamard(gated_conv_layer(in, t.constant(ws), t.constant(wg), t.constant(gamma), t.constant(beta)),
                          t.constant(gated)));
    }, x) < 1e-4);
  }

  TEST_CASE("mixer block") {
    std::mt19937_64 rng(8);
    Tape tape;
    const Matrix s = random_matrix(2, 2, rng);
    const Matrix g1 = random_matrix(1, 2, rng), b1 = random_matrix(1, 2, rng);
    const Matrix g2 = random_matrix(1, 2, rng), b2 = random_matrix(1, 2, rng);
    const Matrix w1 = random_matrix(3, 2, rng), w2 = random_matrix(2, 3, rng);
    const Matrix w4 = random_matrix(3, 2, rng), w3 = random_matrix(2, 3, rng);
    auto weights = [&](const Matrix& w2v, const Matrix& w3v) {
      return MixerWeights{tape.constant(g1), tape.constant(b1), tape.constant(w1), tape.constant(w2v),
                          tape.constant(g2), tape.constant(b2), tape.constant(w4), tape.constant(w3v)};
    };

    const Matrix identity =
        mixer_block(tape.constant(s), weights(Matrix::Zero(2, 3), Matrix::Zero(2, 3)), MixerActivation::gelu).value();
    CHECK(identity == s);

    auto affine_ln = [](const Matrix& x, const Matrix& g, const Matrix& b) {
      Matrix out = ln_rows(x);
      for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) = out.row(r).cwiseProduct(g) + b;
      return out;
    };
    const Matrix u = s + w2 * apply(w1 * affine_ln(s, g1, b1), gelu_ref);
    const Matrix v = u + (w3 * apply(w4 * affine_ln(u, g2, b2).transpose(), gelu_ref)).transpose();
    const Matrix got = mixer_block(tape.constant(s), weights(w2, w3), MixerActivation::gelu).value();
    CHECK((got - v).cwiseAbs().maxCoeff() < 1e-12);

    const Matrix x = random_matrix(5, 4, rng);
    const Matrix p1 = random_matrix(6, 5, rng), p2 = random_matrix(5, 6, rng);
    const Matrix p4 = random_matrix(3, 4, rng), p3 = random_matrix(4, 3, rng);
    for (auto act : {MixerActivation::gelu, MixerActivation::sigmoid}) {
      CHECK(grad_check([&](Tape& t, const Tensor& in) {
        MixerWeights w{t.constant(Matrix::Ones(1, 4)), t.constant(Matrix::Zero(1, 4)), t.constant(p1), t.constant(p2),
                       t.constant(Matrix::Ones(1, 4)), t.constant(Matrix::Zero(1, 4)), t.constant(p4), t.constant(p3)};
        return sum(hadamard(mixer_block(in, w, act), t.constant(x)));
      }, x) < 1e-4);
    }

    Matrix feats(200, 23);
    for (Eigen::Index t = 0; t < 200; ++t) feats.row(t).setConstant(static_cast<double>(t));
    const Matrix tokens = mixer_tokens(feats, 200, 4);
    CHECK(tokens.rows() == 50);
    CHECK(tokens.cols() == 92);
    CHECK(tokens(1, 23) == 5.0);
    const Matrix padded = mixer_tokens(feats.topRows(10), 200, 4);
    CHECK(padded(2, 23 * 2) == 0.0);
    CHECK(padded(2, 0) == 8.0);
    Matrix longer(220, 1);
    for (Eigen::Index t = 0; t < 220; ++t) longer(t, 0) = static_cast<double>(t);
    CHECK(mixer_tokens(longer, 200, 4)(0, 0) == 10.0);
    CHECK_THROWS_AS(mixer_tokens(feats, 200, 3), UsageError);
  }

  TEST_CASE("attention pooling and lstm fixed point") {
    std::mt19937_64 rng(12);
    Tape tape;
    const Matrix h = random_matrix(6, 4, rng);
    const AttentionPool uniform = attention_pool(tape.constant(h), tape.constant(Matrix::Zero(1, 4)));
    CHECK(uniform.weights.value().isApprox(Matrix::Constant(6, 1, 1.0 / 6)));
    CHECK((uniform.pooled.value() - h.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
    const AttentionPool single = attention_pool(tape.constant(h.topRows(1)), tape.constant(random_matrix(1, 4, rng)));
    CHECK(single.weights.value()(0, 0) == 1.0);
    CHECK(single.pooled.value() == h.topRows(1));
    const AttentionPool random = attention_pool(tape.constant(h), tape.constant(random_matrix(1, 4, rng)));
    CHECK(std::abs(random.weights.value().sum() - 1.0) < 1e-12);
    CHECK_THROWS_AS(attention_pool(tape.constant(h), tape.constant(Matrix::Zero(1, 3))), UsageError);

    // Zero recurrence and a saturated-closed forget gate: every step sees the
    // same gate values, so h_t = o * tanh(i * g) for all t.
    const int hidden = 3;
    const Matrix x = Matrix::Constant(7, 2, 0.4);
    const Matrix wi = random_matrix(2, 4 * hidden, rng);
    Matrix bias = random_matrix(1, 4 * hidden, rng);
    bias.middleCols(hidden, hidden).setConstant(-60.0);
    const Matrix states = lstm(tape.constant(x), tape.constant(wi), tape.constant(Matrix::Zero(hidden, 4 * hidden)),
                               tape.constant(bias), false)
                              .value();
    const Eigen::RowVectorXd z = x.row(0) * wi + bias;
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    for (int k = 0; k < hidden; ++k) {
      const double expected = sig(z(3 * hidden + k)) * std::tanh(sig(z(k)) * std::tanh(z(2 * hidden + k)));
      for (int t = 0; t < 7; ++t) CHECK(states(t, k) == doctest::Approx(expected).epsilon(1e-12));
    }
    const AttentionPool flat = attention_pool(tape.constant(states), tape.constant(random_matrix(1, hidden, rng)));
    CHECK((flat.weights.value().array() - 1.0 / 7).abs().maxCoeff() < 1e-12);
  }

  TEST_CASE("self attention and positional encoding") {
    std::mt19937_64 rng(15);
    Tape tape;
    const Matrix v = random_matrix(5, 3, rng);
    const Matrix k = random_matrix(5, 3, rng);
    const Matrix out = self_attention(tape.constant(Matrix::Zero(5, 3)), tape.constant(k), tape.constant(v)).value();
    for (Eigen::Index r = 0; r < 5; ++r) CHECK((out.row(r) - v.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
    const Matrix one = random_matrix(1, 3, rng);
    CHECK(self_attention(tape.constant(one), tape.constant(one), tape.constant(v.topRows(1))).value() == v.topRows(1));

    Matrix q2(2, 2), k2(2, 2), v2(2, 2);
    q2 << 1, 0, 0, 1;
    k2 << 1, 2, 3, 4;
    v2 << 1, 10, 100, 1000;
    const Matrix got = self_attention(tape.constant(q2), tape.constant(k2), tape.constant(v2)).value();
    for (int r = 0; r < 2; ++r) {
      const double s0 = (q2(r, 0) * k2(0, 0) + q2(r, 1) * k2(0, 1)) / std::sqrt(2.0);
      const double s1 = (q2(r, 0) * k2(1, 0) + q2(r, 1) * k2(1, 1)) / std::sqrt(2.0);
      const double a0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
      for (int c = 0; c < 2; ++c) CHECK(got(r, c) == doctest::Approx(a0 * v2(0, c) + (1 - a0) * v2(1, c)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(self_attention(tape.constant(q2), tape.constant(Matrix::Zero(2, 3)), tape.constant(v2)), UsageError);

    const Matrix pe = positional_encoding(4, 6);
    for (int i = 0; i < 6; ++i) CHECK(pe(0, i) == (i % 2 == 0 ? 0.0 : 1.0));
    CHECK(pe(3, 2) == doctest::Approx(std::sin(3.0 / std::pow(10000.0, 2.0 / 6))));
  }

  TEST_CASE("positional encoding makes the transformer order sensitive") {
    std::mt19937_64 rng(16);
    const Matrix x = random_matrix(6, 3, rng);
    Matrix shuffled = x;
    shuffled.row(0).swap(shuffled.row(4));
    shuffled.row(2).swap(shuffled.row(5));
    ModelConfig cfg = tiny(Architecture::transformer);
    const Model with_pe(cfg, 3);
    CHECK((with_pe.logits(x) - with_pe.logits(shuffled)).cwiseAbs().maxCoeff() > 1e-6);
    cfg.positional_encoding = false;
    const Model without(cfg, 3);
    CHECK((without.logits(x) - without.logits(shuffled)).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("configs, shapes and finite logits") {
    std::mt19937_64 rng(20);
    for (Architecture arch : kAll) {
      CAPTURE(display_name(arch));
      CHECK(parse_architecture(display_name(arch)) == arch);
      const Model model(ModelConfig::defaults(arch), 1);
      CHECK(model.parameter_count() == Model(ModelConfig::defaults(arch), 2).parameter_count());
      for (Eigen::Index steps : {1, 7, 200}) {
        const Matrix feats = random_matrix(steps, 23, rng);
        if (arch == Architecture::gated_cnn && steps < 7) {
          CHECK_THROWS_AS(model.logits(feats), DataError);
          continue;
        }
        const Eigen::RowVectorXd logits = model.logits(feats);
        CHECK(logits.size() == 4);
        CHECK(logits.allFinite());
      }
      CHECK_THROWS_AS(model.logits(random_matrix(10, 20, rng)), DataError);
      CHECK(ModelConfig::from_json(ModelConfig::defaults(arch).to_json()).to_json() ==
            ModelConfig::defaults(arch).to_json());
    }
    CHECK(ModelConfig::defaults(Architecture::gated_cnn).n_kernels == 64);
    CHECK(ModelConfig::defaults(Architecture::mlp_mixer).final_nodes == 128);
    CHECK(ModelConfig::defaults(Architecture::bilstm).lstm_cells == 128);
    CHECK(ModelConfig::defaults(Architecture::transformer).d_model == 64);

    ModelConfig bad = ModelConfig::defaults(Architecture::transformer);
    bad.n_heads = 3;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    CHECK_THROWS_AS(ModelConfig::from_json({{"arch", "mlp_mixer"}, {"patch_t", 7}}), UsageError);
    CHECK_THROWS_AS(ModelConfig::from_json({{"arch", "bilstm"}, {"cells", 7}}), UsageError);
    CHECK_THROWS_AS(parse_architecture("resnet"), UsageError);
  }

  TEST_CASE("full-model gradients on tiny configs") {
    std::mt19937_64 rng(30);
    for (Architecture arch : kAll) {
      CAPTURE(display_name(arch));
      Model model(tiny(arch), 5);
      // Random weights for every parameter so no gradient path is trivially zero.
      for (Parameter* p : model.parameters()) p->value = random_matrix(p->value.rows(), p->value.cols(), rng, 0.5);
      const Matrix feats = random_matrix(6, 3, rng);
      const double err = grad_check_parameters(
          [&](Tape& tape) { return cross_entropy(model.forward(tape, feats), 1); }, model.parameters());
      CHECK(err < 1e-4);
    }

    ModelConfig wide = tiny(Architecture::transformer);
    wide.input_dim = 8;
    wide.n_layers = 1;
    Model transformer(wide, 9);
    const Matrix block_input = random_matrix(6, 8, rng);
    CHECK(grad_check_parameters([&](Tape& tape) { return cross_entropy(transformer.forward(tape, block_input), 2); },
                                transformer.parameters()) < 1e-4);
  }

  TEST_CASE("checkpoints round trip bit exactly") {
    const auto dir = oracle::temp_dir("checkpoint");
    std::mt19937_64 rng(40);
    for (Architecture arch : kAll) {
      const Model model(tiny(arch), 11);
      save_checkpoint(dir / "m.ckpt", model, 7, {{"note", "x"}});
      const Checkpoint back = load_checkpoint(dir / "m.ckpt");
      CHECK(back.epoch == 7);
      CHECK(back.extra.at("note") == "x");
      REQUIRE(back.model.parameter_list().size() == model.parameter_list().size());
      for (std::size_t i = 0; i < model.parameter_list().size(); ++i) {
        CHECK(back.model.parameter_list()[i].name == model.parameter_list()[i].name);
        CHECK(back.model.parameter_list()[i].value == model.parameter_list()[i].value);
      }
      const Matrix feats = random_matrix(8, 3, rng);
      CHECK(back.model.logits(feats) == model.logits(feats));
    }
  }

  TEST_CASE("every architecture fits a separable toy set") {
    std::mt19937_64 rng(50);
    std::vector<Matrix> inputs;
    std::vector<int> labels;
    for (int i = 0; i < 12; ++i) {
      const int label = i % 3;
      Matrix x = random_matrix(8, 3, rng, 0.3);
      x.col(label).array() += 1.5;
      inputs.push_back(x);
      labels.push_back(label);
    }
    for (Architecture arch : kAll) {
      CAPTURE(display_name(arch));
      Model model(tiny(arch), 13);
      auto params = model.parameters();
      AdamState state;
      double mean_loss = 1e9;
      for (int epoch = 0; epoch < 200 && mean_loss >= 0.1; ++epoch) {
        mean_loss = 0.0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
          zero_grad(params);
          Tape tape;
          const Tensor loss = cross_entropy(model.forward(tape, inputs[i]), labels[i]);
          mean_loss += loss.value()(0, 0) / static_cast<double>(inputs.size());
          tape.backward(loss);
          adam_step(params, state, 1e-2);
        }
      }
      CHECK(mean_loss < 0.1);
    }
  }
}
