#pragma once

#include <vector>

#include "serbench/tensor.hpp"

namespace serbench {

inline constexpr double kLayerNormEps = 1e-10;

// Elementwise arithmetic. `b` in add/sub may be a 1 x cols row, broadcast
// over the rows of `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_constant(const Tensor& a, const Matrix& c);

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& a);

/// Softmax along `axis`: 1 normalizes each row, 0 each column.
Tensor softmax(const Tensor& a, int axis = 1);

/// Normalizes every row over its columns, then applies gamma/beta (1 x cols).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);

/// Mean over `axis`: 0 averages rows (time) into 1 x cols, 1 averages columns.
Tensor mean_pool(const Tensor& a, int axis = 0);
Tensor sum(const Tensor& a);

/// x * W + b with `b` a 1 x out row.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Same-padded 1-D cross-correlation along time. `x` is T x C_in, `kernel` is
/// (K * C_in) x C_out with tap-major rows: output(t) = sum_j x(t + j - (K-1)/2) * kernel_j.
Tensor conv1d(const Tensor& x, const Tensor& kernel);

/// -log softmax(logits)[label] for a 1 x C row.
Tensor cross_entropy(const Tensor& logits, int label);

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count);

/// One direction of an LSTM over all T steps (gates i, f, g, o; no
/// peepholes). x: T x D, w_input: D x 4H, w_recurrent: H x 4H, bias: 1 x 4H.
/// Returns T x H hidden states in input time order.
Tensor lstm(const Tensor& x, const Tensor& w_input, const Tensor& w_recurrent, const Tensor& bias,
            bool reverse);

}  // namespace serbench
