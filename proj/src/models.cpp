#include "serbench/models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "serbench/blob_io.hpp"
#include "serbench/error.hpp"
#include "serbench/rng.hpp"

namespace serbench {
namespace {

std::string normalized_name(std::string_view name) {
  std::string out;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  return out;
}

std::string arch_key(Architecture arch) {
  switch (arch) {
    case Architecture::gated_cnn: return "gated_cnn";
    case Architecture::mlp_mixer: return "mlp_mixer";
    case Architecture::bilstm: return "bilstm";
    case Architecture::transformer: return "transformer";
  }
  return "gated_cnn";
}

Tensor activate(const Tensor& x, MixerActivation activation) {
  return activation == MixerActivation::gelu ? gelu(x) : sigmoid(x);
}

template <typename Bind>
Tensor gated_cnn_graph(Tape& tape, const ModelConfig& cfg, const Matrix& features, Bind& bind) {
  if (features.rows() < cfg.kernel_width) {
    throw DataError("gated_cnn: T = " + std::to_string(features.rows()) +
                    " shorter than kernel width " + std::to_string(cfg.kernel_width));
  }
  Tensor x = tape.constant(features);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "conv" + std::to_string(l) + ".";
    x = gated_conv_layer(x, bind(p + "w_s"), bind(p + "w_g"), bind(p + "ln.gamma"),
                         bind(p + "ln.beta"));
  }
  const Tensor pooled = mean_pool(x, 0);
  const Tensor hidden = relu(linear(pooled, bind("fc.w"), bind("fc.b")));
  return linear(hidden, bind("out.w"), bind("out.b"));
}

template <typename Bind>
Tensor mlp_mixer_graph(Tape& tape, const ModelConfig& cfg, const Matrix& features, Bind& bind) {
  Tensor x = tape.constant(mixer_tokens(features, cfg.fixed_T, cfg.patch_t));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    MixerWeights w{bind(p + "ln1.gamma"), bind(p + "ln1.beta"), bind(p + "w1"), bind(p + "w2"),
                   bind(p + "ln2.gamma"), bind(p + "ln2.beta"), bind(p + "w4"), bind(p + "w3")};
    x = mixer_block(x, w, cfg.activation);
  }
  return linear(mean_pool(x, 0), bind("out.w"), bind("out.b"));
}

template <typename Bind>
Tensor bilstm_graph(Tape& tape, const ModelConfig& cfg, const Matrix& features, Bind& bind) {
  if (features.rows() == 0) throw DataError("bilstm: empty sequence");
  Tensor x = tape.constant(features);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "lstm" + std::to_string(l) + ".";
    const Tensor fwd = lstm(x, bind(p + "fwd.w_input"), bind(p + "fwd.w_recurrent"),
                            bind(p + "fwd.bias"), false);
    const Tensor bwd = lstm(x, bind(p + "bwd.w_input"), bind(p + "bwd.w_recurrent"),
                            bind(p + "bwd.bias"), true);
    x = concat_cols({fwd, bwd});
  }
  const AttentionPool pool = attention_pool(x, bind("attention.u"));
  const Tensor hidden = relu(linear(pool.pooled, bind("fc.w"), bind("fc.b")));
  return linear(hidden, bind("out.w"), bind("out.b"));
}

template <typename Bind>
Tensor transformer_graph(Tape& tape, const ModelConfig& cfg, const Matrix& features, Bind& bind) {
  if (features.rows() == 0) throw DataError("transformer: empty sequence");
  Tensor x = linear(tape.constant(features), bind("input.w"), bind("input.b"));
  if (cfg.positional_encoding) x = add_constant(x, positional_encoding(features.rows(), cfg.d_model));

  const int head_dim = cfg.d_model / cfg.n_heads;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    const Tensor q = linear(x, bind(p + "wq"), bind(p + "bq"));
    const Tensor k = linear(x, bind(p + "wk"), bind(p + "bk"));
    const Tensor v = linear(x, bind(p + "wv"), bind(p + "bv"));
    std::vector<Tensor> heads;
    for (int h = 0; h < cfg.n_heads; ++h) {
      heads.push_back(self_attention(slice_cols(q, h * head_dim, head_dim),
                                     slice_cols(k, h * head_dim, head_dim),
                                     slice_cols(v, h * head_dim, head_dim)));
    }
    const Tensor attended = linear(concat_cols(heads), bind(p + "wo"), bind(p + "bo"));
    x = layer_norm(add(x, attended), bind(p + "ln1.gamma"), bind(p + "ln1.beta"));
    const Tensor ff = linear(relu(linear(x, bind(p + "ff1.w"), bind(p + "ff1.b"))),
                             bind(p + "ff2.w"), bind(p + "ff2.b"));
    x = layer_norm(add(x, ff), bind(p + "ln2.gamma"), bind(p + "ln2.beta"));
  }
  return linear(mean_pool(x, 0), bind("out.w"), bind("out.b"));
}

template <typename Bind>
Tensor build_graph(Tape& tape, const ModelConfig& cfg, const Matrix& features, Bind& bind) {
  if (features.cols() != cfg.input_dim) {
    throw DataError("model expects " + std::to_string(cfg.input_dim) + " feature dims, got " +
                    std::to_string(features.cols()));
  }
  switch (cfg.arch) {
    case Architecture::gated_cnn: return gated_cnn_graph(tape, cfg, features, bind);
    case Architecture::mlp_mixer: return mlp_mixer_graph(tape, cfg, features, bind);
    case Architecture::bilstm: return bilstm_graph(tape, cfg, features, bind);
    case Architecture::transformer: return transformer_graph(tape, cfg, features, bind);
  }
  throw UsageError("unknown architecture");
}

void require_arch(const Model& model, Architecture arch) {
  if (model.config().arch != arch) {
    throw UsageError(std::string("model is ") + std::string(display_name(model.config().arch)) +
                     ", expected " + std::string(display_name(arch)));
  }
}

}  // namespace

std::string_view display_name(Architecture arch) {
  switch (arch) {
    case Architecture::gated_cnn: return "Gated-CNN";
    case Architecture::mlp_mixer: return "MLP-mixer";
    case Architecture::bilstm: return "Bi-LSTM";
    case Architecture::transformer: return "Transformer";
  }
  return "Gated-CNN";
}

Architecture parse_architecture(std::string_view name) {
  const std::string n = normalized_name(name);
  if (n == "gatedcnn" || n == "gatedconv") return Architecture::gated_cnn;
  if (n == "mlpmixer" || n == "mixer") return Architecture::mlp_mixer;
  if (n == "bilstm" || n == "lstm") return Architecture::bilstm;
  if (n == "transformer") return Architecture::transformer;
  throw UsageError("unknown architecture '" + std::string(name) +
                   "'; valid: gated_cnn, mlp_mixer, bilstm, transformer");
}

ModelConfig ModelConfig::defaults(Architecture arch) {
  ModelConfig cfg;
  cfg.arch = arch;
  switch (arch) {
    case Architecture::gated_cnn:
      cfg.n_layers = 3;
      cfg.n_kernels = 64;
      cfg.kernel_width = 7;
      cfg.final_nodes = 64;
      break;
    case Architecture::mlp_mixer:
      cfg.n_layers = 4;
      cfg.fixed_T = 200;
      cfg.patch_t = 4;
      cfg.final_nodes = 128;
      break;
    case Architecture::bilstm:
      cfg.n_layers = 2;
      cfg.lstm_cells = 128;
      cfg.final_nodes = 64;
      break;
    case Architecture::transformer:
      cfg.n_layers = 2;
      cfg.d_model = 64;
      cfg.n_heads = 4;
      cfg.final_nodes = 128;
      break;
  }
  return cfg;
}

void ModelConfig::validate() const {
  const auto positive = [](int v, const char* field) {
    if (v <= 0) throw UsageError(std::string("model config: field '") + field + "' must be positive");
  };
  positive(input_dim, "input_dim");
  positive(n_layers, "n_layers");
  positive(final_nodes, "final_nodes");
  if (n_classes < 2) throw UsageError("model config: field 'n_classes' must be at least 2");
  switch (arch) {
    case Architecture::gated_cnn:
      positive(n_kernels, "n_kernels");
      positive(kernel_width, "kernel_width");
      break;
    case Architecture::mlp_mixer:
      positive(patch_t, "patch_t");
      positive(fixed_T, "fixed_T");
      if (fixed_T % patch_t != 0) {
        throw UsageError("model config: field 'fixed_T' must be divisible by 'patch_t'");
      }
      break;
    case Architecture::bilstm:
      positive(lstm_cells, "lstm_cells");
      break;
    case Architecture::transformer:
      positive(d_model, "d_model");
      positive(n_heads, "n_heads");
      if (d_model % n_heads != 0) {
        throw UsageError("model config: field 'd_model' must be divisible by 'n_heads'");
      }
      break;
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"arch", arch_key(arch)},
          {"input_dim", input_dim},
          {"n_classes", n_classes},
          {"n_layers", n_layers},
          {"final_nodes", final_nodes},
          {"n_kernels", n_kernels},
          {"kernel_width", kernel_width},
          {"n_heads", n_heads},
          {"d_model", d_model},
          {"lstm_cells", lstm_cells},
          {"patch_t", patch_t},
          {"fixed_T", fixed_T},
          {"activation", activation == MixerActivation::gelu ? "gelu" : "sigmoid"},
          {"positional_encoding", positional_encoding}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  if (j.is_string()) return defaults(parse_architecture(j.get<std::string>()));
  if (!j.is_object() || !j.contains("arch")) {
    throw UsageError("model config: expected an object with field 'arch'");
  }
  ModelConfig cfg = defaults(parse_architecture(j.at("arch").get<std::string>()));
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "arch") continue;
      if (key == "input_dim") cfg.input_dim = value.get<int>();
      else if (key == "n_classes") cfg.n_classes = value.get<int>();
      else if (key == "n_layers") cfg.n_layers = value.get<int>();
      else if (key == "final_nodes") cfg.final_nodes = value.get<int>();
      else if (key == "n_kernels") cfg.n_kernels = value.get<int>();
      else if (key == "kernel_width") cfg.kernel_width = value.get<int>();
      else if (key == "n_heads") cfg.n_heads = value.get<int>();
      else if (key == "d_model") cfg.d_model = value.get<int>();
      else if (key == "lstm_cells") cfg.lstm_cells = value.get<int>();
      else if (key == "patch_t") cfg.patch_t = value.get<int>();
      else if (key == "fixed_T") cfg.fixed_T = value.get<int>();
      else if (key == "positional_encoding") cfg.positional_encoding = value.get<bool>();
      else if (key == "activation") {
        const auto a = value.get<std::string>();
        if (a == "gelu") cfg.activation = MixerActivation::gelu;
        else if (a == "sigmoid") cfg.activation = MixerActivation::sigmoid;
        else throw UsageError("model config: field 'activation' must be gelu or sigmoid");
      } else {
        throw UsageError("model config: unknown field '" + key + "'");
      }
    } catch (const nlohmann::json::exception&) {
      throw UsageError("model config: field '" + key + "' has the wrong type");
    }
  }
  cfg.validate();
  return cfg;
}

Tensor gated_conv_layer(const Tensor& s, const Tensor& w_s, const Tensor& w_g,
                        const Tensor& ln_gamma, const Tensor& ln_beta) {
  const Tensor gated = hadamard(conv1d(s, w_s), sigmoid(conv1d(s, w_g)));
  return layer_norm(gated, ln_gamma, ln_beta);
}

Tensor mixer_block(const Tensor& s, const MixerWeights& w, MixerActivation activation) {
  const Tensor token_mix =
      matmul(w.w2, activate(matmul(w.w1, layer_norm(s, w.ln1_gamma, w.ln1_beta)), activation));
  const Tensor u = add(s, token_mix);
  const Tensor channel_mix =
      matmul_nt(activate(matmul_nt(layer_norm(u, w.ln2_gamma, w.ln2_beta), w.w4), activation), w.w3);
  return add(u, channel_mix);
}

AttentionPool attention_pool(const Tensor& hidden, const Tensor& u) {
  if (hidden.rows() == 0) throw DataError("attention_pool: empty sequence");
  if (u.rows() != 1 || u.cols() != hidden.cols()) {
    throw UsageError("attention_pool: vector size " + std::to_string(u.cols()) +
                     " does not match hidden size " + std::to_string(hidden.cols()));
  }
  const Tensor weights = softmax(matmul_nt(hidden, u), 0);
  return {matmul(transpose(weights), hidden), weights};
}

Tensor self_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw UsageError("self_attention: shape mismatch");
  }
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return matmul(softmax(scale(matmul_nt(q, k), inv_sqrt_dk), 1), v);
}

Matrix positional_encoding(Eigen::Index steps, Eigen::Index d_model) {
  Matrix pe(steps, d_model);
  for (Eigen::Index t = 0; t < steps; ++t) {
    for (Eigen::Index i = 0; i < d_model; i += 2) {
      const double angle = static_cast<double>(t) /
                           std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      pe(t, i) = std::sin(angle);
      if (i + 1 < d_model) pe(t, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

Matrix mixer_tokens(const Matrix& features, int fixed_T, int patch_t) {
  if (patch_t <= 0 || fixed_T % patch_t != 0) {
    throw UsageError("mixer_tokens: fixed_T must be divisible by patch_t");
  }
  const Eigen::Index dims = features.cols();
  Matrix fitted = Matrix::Zero(fixed_T, dims);
  if (features.rows() >= fixed_T) {
    fitted = features.middleRows((features.rows() - fixed_T) / 2, fixed_T);
  } else {
    fitted.topRows(features.rows()) = features;
  }
  const Eigen::Index tokens = fixed_T / patch_t;
  Matrix out(tokens, patch_t * dims);
  for (Eigen::Index n = 0; n < tokens; ++n) {
    for (Eigen::Index j = 0; j < patch_t; ++j) {
      out.block(n, j * dims, 1, dims) = fitted.row(n * patch_t + j);
    }
  }
  return out;
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng = make_rng(stream_seed(seed, "model_init", arch_key(cfg_.arch)));
  const auto uniform = [&rng](Eigen::Index rows, Eigen::Index cols, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = dist(rng);
    return m;
  };
  const auto xavier = [&](Eigen::Index rows, Eigen::Index cols, double fan_in, double fan_out) {
    return uniform(rows, cols, std::sqrt(6.0 / (fan_in + fan_out)));
  };
  const auto dense = [&](const std::string& prefix, int in, int out) {
    add(prefix + ".w", xavier(in, out, in, out));
    add(prefix + ".b", Matrix::Zero(1, out));
  };
  const auto norm = [&](const std::string& prefix, int width) {
    add(prefix + ".gamma", Matrix::Ones(1, width));
    add(prefix + ".beta", Matrix::Zero(1, width));
  };
  const int f = cfg_.input_dim;

  switch (cfg_.arch) {
    case Architecture::gated_cnn: {
      int c_in = f;
      for (int l = 0; l < cfg_.n_layers; ++l) {
        const std::string p = "conv" + std::to_string(l);
        const int fan_in = cfg_.kernel_width * c_in;
        add(p + ".w_s", xavier(fan_in, cfg_.n_kernels, fan_in, cfg_.n_kernels));
        add(p + ".w_g", xavier(fan_in, cfg_.n_kernels, fan_in, cfg_.n_kernels));
        norm(p + ".ln", cfg_.n_kernels);
        c_in = cfg_.n_kernels;
      }
      dense("fc", cfg_.n_kernels, cfg_.final_nodes);
      dense("out", cfg_.final_nodes, cfg_.n_classes);
      break;
    }
    case Architecture::mlp_mixer: {
      const int tokens = cfg_.fixed_T / cfg_.patch_t;
      const int channels = cfg_.patch_t * f;
      const int hidden = cfg_.final_nodes;
      for (int l = 0; l < cfg_.n_layers; ++l) {
        const std::string p = "block" + std::to_string(l);
        norm(p + ".ln1", channels);
        add(p + ".w1", xavier(hidden, tokens, tokens, hidden));
        add(p + ".w2", xavier(tokens, hidden, hidden, tokens));
        norm(p + ".ln2", channels);
        add(p + ".w4", xavier(hidden, channels, channels, hidden));
        add(p + ".w3", xavier(channels, hidden, hidden, channels));
      }
      dense("out", channels, cfg_.n_classes);
      break;
    }
    case Architecture::bilstm: {
      const int h = cfg_.lstm_cells;
      const double bound = 1.0 / std::sqrt(static_cast<double>(h));
      int d_in = f;
      for (int l = 0; l < cfg_.n_layers; ++l) {
        for (const char* dir : {"fwd", "bwd"}) {
          const std::string p = "lstm" + std::to_string(l) + "." + dir;
          add(p + ".w_input", uniform(d_in, 4 * h, bound));
          add(p + ".w_recurrent", uniform(h, 4 * h, bound));
          Matrix bias = Matrix::Zero(1, 4 * h);
          bias.middleCols(h, h).setOnes();  // forget gate
          add(p + ".bias", bias);
        }
        d_in = 2 * h;
      }
      add("attention.u", uniform(1, 2 * h, 1.0 / std::sqrt(2.0 * h)));
      dense("fc", 2 * h, cfg_.final_nodes);
      dense("out", cfg_.final_nodes, cfg_.n_classes);
      break;
    }
    case Architecture::transformer: {
      const int d = cfg_.d_model;
      dense("input", f, d);
      for (int l = 0; l < cfg_.n_layers; ++l) {
        const std::string p = "block" + std::to_string(l) + ".";
        for (const char* proj : {"q", "k", "v", "o"}) {
          add(p + "w" + proj, xavier(d, d, d, d));
          add(p + "b" + proj, Matrix::Zero(1, d));
        }
        norm(p + "ln1", d);
        dense(p + "ff1", d, cfg_.final_nodes);
        dense(p + "ff2", cfg_.final_nodes, d);
        norm(p + "ln2", d);
      }
      dense("out", d, cfg_.n_classes);
      break;
    }
  }
}

void Model::add(std::string name, Matrix value) { params_.emplace_back(std::move(name), std::move(value)); }

Tensor Model::forward(Tape& tape, const Matrix& features) {
  auto bind = [&](const std::string& name) { return tape.parameter(parameter(name)); };
  return build_graph(tape, cfg_, features, bind);
}

Eigen::RowVectorXd Model::logits(const Matrix& features) const {
  Tape tape;
  auto bind = [&](const std::string& name) { return tape.constant(parameter(name).value); };
  return build_graph(tape, cfg_, features, bind).value().row(0);
}

int Model::predict(const Matrix& features) const {
  Eigen::Index best = 0;
  logits(features).maxCoeff(&best);
  return static_cast<int>(best);
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

Parameter& Model::parameter(std::string_view name) {
  return const_cast<Parameter&>(std::as_const(*this).parameter(name));
}

const Parameter& Model::parameter(std::string_view name) const {
  const auto it = std::find_if(params_.begin(), params_.end(),
                               [&](const Parameter& p) { return p.name == name; });
  if (it == params_.end()) throw UsageError("model has no parameter '" + std::string(name) + "'");
  return *it;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

Tensor gated_cnn_forward(Tape& tape, Model& model, const Matrix& features) {
  require_arch(model, Architecture::gated_cnn);
  return model.forward(tape, features);
}

Tensor mlp_mixer_forward(Tape& tape, Model& model, const Matrix& features) {
  require_arch(model, Architecture::mlp_mixer);
  return model.forward(tape, features);
}

Tensor bilstm_forward(Tape& tape, Model& model, const Matrix& features) {
  require_arch(model, Architecture::bilstm);
  return model.forward(tape, features);
}

Tensor transformer_forward(Tape& tape, Model& model, const Matrix& features) {
  require_arch(model, Architecture::transformer);
  return model.forward(tape, features);
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, int epoch,
                     const nlohmann::json& extra) {
  nlohmann::json shapes = nlohmann::json::array();
  std::vector<double> blob;
  blob.reserve(model.parameter_count());
  for (const auto& p : model.parameter_list()) {
    shapes.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) blob.push_back(p.value(r, c));
    }
  }
  const nlohmann::json config = model.config().to_json();
  const nlohmann::json header = {{"architecture", std::string(display_name(model.config().arch))},
                                 {"config", config},
                                 {"config_hash", content_hash(config)},
                                 {"epoch", epoch},
                                 {"parameters", shapes},
                                 {"extra", extra}};
  write_blob_file(path, header, blob);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  BlobFile blob = read_blob_file(path);
  const nlohmann::json& h = blob.header;
  ModelConfig cfg = ModelConfig::from_json(h.at("config"));
  if (content_hash(cfg.to_json()) != h.value("config_hash", std::string{})) {
    throw DataError(path.string() + ": checkpoint config hash mismatch");
  }
  Checkpoint ckpt{Model(cfg, 0), h.value("epoch", 0), h.value("extra", nlohmann::json::object())};
  const auto& shapes = h.at("parameters");
  auto params = ckpt.model.parameters();
  if (shapes.size() != params.size()) throw DataError(path.string() + ": parameter count mismatch");
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (shapes[i].at("name").get<std::string>() != p.name ||
        shapes[i].at("rows").get<Eigen::Index>() != p.value.rows() ||
        shapes[i].at("cols").get<Eigen::Index>() != p.value.cols()) {
      throw DataError(path.string() + ": parameter layout mismatch at '" + p.name + "'");
    }
    if (offset + static_cast<std::size_t>(p.value.size()) > blob.payload.size()) {
      throw DataError(path.string() + ": truncated parameter blob");
    }
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) p.value(r, c) = blob.payload[offset++];
    }
  }
  if (offset != blob.payload.size()) throw DataError(path.string() + ": trailing parameter data");
  return ckpt;
}

}  // namespace serbench
