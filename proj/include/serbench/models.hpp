#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "serbench/ops.hpp"
#include "serbench/tensor.hpp"

namespace serbench {

enum class Architecture { gated_cnn, mlp_mixer, bilstm, transformer };
enum class MixerActivation { gelu, sigmoid };

/// Display name used in reports: Gated-CNN, MLP-mixer, Bi-LSTM, Transformer.
std::string_view display_name(Architecture arch);
/// Accepts display names and snake_case identifiers (gated_cnn, mlp_mixer, ...).
Architecture parse_architecture(std::string_view name);

/// Hyperparameters for all four classifiers. Fields irrelevant to `arch`
/// are ignored. `final_nodes` is the width of the penultimate layer:
///   Gated-CNN / Bi-LSTM : hidden units of the fully-connected head
///   MLP-mixer           : hidden units of both mixing MLPs
///   Transformer         : position-wise feed-forward width
struct ModelConfig {
  Architecture arch = Architecture::gated_cnn;
  int input_dim = 23;
  int n_classes = 4;
  int n_layers = 3;
  int final_nodes = 64;
  int n_kernels = 64;
  int kernel_width = 7;
  int n_heads = 4;
  int d_model = 64;
  int lstm_cells = 128;
  int patch_t = 4;
  int fixed_T = 200;
  MixerActivation activation = MixerActivation::gelu;
  bool positional_encoding = true;

  /// Desk-scale defaults for `arch`.
  static ModelConfig defaults(Architecture arch);

  void validate() const;  // throws UsageError naming the field
  nlohmann::json to_json() const;
  /// Starts from defaults(arch) and overrides the fields present in `j`.
  static ModelConfig from_json(const nlohmann::json& j);
};

// Layer building blocks.

/// LN((S * w_s) . sigmoid(S * w_g)) with same-padded temporal convolution.
Tensor gated_conv_layer(const Tensor& s, const Tensor& w_s, const Tensor& w_g,
                        const Tensor& ln_gamma, const Tensor& ln_beta);

struct MixerWeights {
  Tensor ln1_gamma, ln1_beta;
  Tensor w1;  // hidden x tokens
  Tensor w2;  // tokens x hidden
  Tensor ln2_gamma, ln2_beta;
  Tensor w4;  // hidden x channels
  Tensor w3;  // channels x hidden
};

/// Token mixing U = S + W2 act(W1 LN(S)) followed by channel mixing
/// V = U + (W3 act(W4 LN(U)^T))^T. No biases.
Tensor mixer_block(const Tensor& s, const MixerWeights& w, MixerActivation activation);

struct AttentionPool {
  Tensor pooled;    // 1 x D
  Tensor weights;   // T x 1, sums to one
};

/// alpha = softmax_t(H_t . u), pooled = sum_t alpha_t H_t. `u` is 1 x D.
AttentionPool attention_pool(const Tensor& hidden, const Tensor& u);

/// softmax(Q K^T / sqrt(d_k)) V, row-wise softmax.
Tensor self_attention(const Tensor& q, const Tensor& k, const Tensor& v);

/// PE(t, 2i) = sin(t / 10000^(2i/d)), PE(t, 2i+1) = cos(t / 10000^(2i/d)).
Matrix positional_encoding(Eigen::Index steps, Eigen::Index d_model);

/// Crops (centred) or zero pads the time axis to `fixed_T`, then groups
/// `patch_t` consecutive frames into one token row.
Matrix mixer_tokens(const Matrix& features, int fixed_T, int patch_t);

/// One of the four classifiers with its parameters in declaration order.
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  /// 1 x n_classes logits; parameters are recorded for backpropagation.
  Tensor forward(Tape& tape, const Matrix& features);
  /// Inference without gradient tracking.
  Eigen::RowVectorXd logits(const Matrix& features) const;
  int predict(const Matrix& features) const;

  std::vector<Parameter*> parameters();
  const std::vector<Parameter>& parameter_list() const { return params_; }
  Parameter& parameter(std::string_view name);
  const Parameter& parameter(std::string_view name) const;
  std::size_t parameter_count() const;

 private:
  void add(std::string name, Matrix value);

  ModelConfig cfg_;
  std::vector<Parameter> params_;
};

/// Architecture-specific entry points; each checks `model.config().arch`.
Tensor gated_cnn_forward(Tape& tape, Model& model, const Matrix& features);
Tensor mlp_mixer_forward(Tape& tape, Model& model, const Matrix& features);
Tensor bilstm_forward(Tape& tape, Model& model, const Matrix& features);
Tensor transformer_forward(Tape& tape, Model& model, const Matrix& features);

/// Checkpoint: JSON header (architecture, config, config hash, epoch,
/// parameter names and shapes, `extra`) + row-major float64 parameter blob.
void save_checkpoint(const std::filesystem::path& path, const Model& model, int epoch,
                     const nlohmann::json& extra = nlohmann::json::object());

struct Checkpoint {
  Model model;
  int epoch = 0;
  nlohmann::json extra;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace serbench
