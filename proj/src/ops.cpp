#include "serbench/ops.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "serbench/error.hpp"

namespace serbench {
namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw UsageError(std::string(op) + ": shape mismatch " + shape(a) + " vs " + shape(b));
}

bool is_row_broadcast(const Matrix& a, const Matrix& b) {
  return b.rows() == 1 && b.cols() == a.cols() && a.rows() != 1;
}

template <typename F>
Tensor unary(const Tensor& a, Matrix value, F local_grad) {
  return a.tape().record(std::move(value), {a},
                         [a, local_grad](Tape& tape, const Matrix& g) {
                           tape.accumulate(a, local_grad(g));
                         });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
    return a.tape().record(av + bv, {a, b}, [a, b](Tape& tape, const Matrix& g) {
      tape.accumulate(a, g);
      tape.accumulate(b, g);
    });
  }
  if (!is_row_broadcast(av, bv)) shape_error("add", av, bv);
  return a.tape().record(av.rowwise() + bv.row(0), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, g.colwise().sum());
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
    return a.tape().record(av - bv, {a, b}, [a, b](Tape& tape, const Matrix& g) {
      tape.accumulate(a, g);
      tape.accumulate(b, -g);
    });
  }
  if (!is_row_broadcast(av, bv)) shape_error("sub", av, bv);
  return a.tape().record(av.rowwise() - bv.row(0), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, -g.colwise().sum());
  });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_error("hadamard", av, bv);
  return a.tape().record(av.cwiseProduct(bv), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g.cwiseProduct(b.value()));
    tape.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, a.value() * s, [s](const Matrix& g) -> Matrix { return g * s; });
}

Tensor add_constant(const Tensor& a, const Matrix& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) shape_error("add_constant", a.value(), c);
  return unary(a, a.value() + c, [](const Matrix& g) -> Matrix { return g; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  return a.tape().record(av * bv, {a, b}, [a, b](Tape& tape, const Matrix& g) {
    if (a.requires_grad()) tape.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) tape.accumulate(b, a.value().transpose() * g);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) shape_error("matmul_nt", av, bv);
  return a.tape().record(av * bv.transpose(), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    if (a.requires_grad()) tape.accumulate(a, g * b.value());
    if (b.requires_grad()) tape.accumulate(b, g.transpose() * a.value());
  });
}

Tensor transpose(const Tensor& a) {
  return unary(a, a.value().transpose(), [](const Matrix& g) -> Matrix { return g.transpose(); });
}

Tensor sigmoid(const Tensor& a) {
  Matrix y = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  return unary(a, y, [y](const Matrix& g) -> Matrix {
    return (g.array() * y.array() * (1.0 - y.array())).matrix();
  });
}

Tensor tanh(const Tensor& a) {
  Matrix y = a.value().array().tanh().matrix();
  return unary(a, y, [y](const Matrix& g) -> Matrix {
    return (g.array() * (1.0 - y.array().square())).matrix();
  });
}

Tensor relu(const Tensor& a) {
  const Matrix& x = a.value();
  Matrix mask = (x.array() > 0.0).cast<double>().matrix();
  return unary(a, x.cwiseMax(0.0), [mask](const Matrix& g) -> Matrix {
    return g.cwiseProduct(mask);
  });
}

Tensor gelu(const Tensor& a) {
  const Matrix& x = a.value();
  const Matrix cdf = x.unaryExpr([](double v) { return 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2)); });
  const Matrix pdf = x.unaryExpr([](double v) {
    return std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
  });
  Matrix local = cdf + x.cwiseProduct(pdf);
  return unary(a, x.cwiseProduct(cdf), [local](const Matrix& g) -> Matrix {
    return g.cwiseProduct(local);
  });
}

Tensor softmax(const Tensor& a, int axis) {
  if (axis != 0 && axis != 1) throw UsageError("softmax: axis must be 0 or 1");
  // Work row-wise on the (possibly transposed) input.
  const Matrix x = axis == 1 ? a.value() : Matrix(a.value().transpose());
  if (x.cols() == 0 || x.rows() == 0) throw UsageError("softmax: empty axis");
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Eigen::RowVectorXd e = (x.row(r).array() - x.row(r).maxCoeff()).exp().matrix();
    y.row(r) = e / e.sum();
  }
  Matrix out = axis == 1 ? y : Matrix(y.transpose());
  return unary(a, out, [y, axis](const Matrix& g_out) -> Matrix {
    const Matrix g = axis == 1 ? g_out : Matrix(g_out.transpose());
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    const Matrix dx = y.cwiseProduct(g.colwise() - dot);
    return axis == 1 ? dx : Matrix(dx.transpose());
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.cols();
  if (gamma.rows() != 1 || gamma.cols() != n) shape_error("layer_norm(gamma)", xv, gamma.value());
  if (beta.rows() != 1 || beta.cols() != n) shape_error("layer_norm(beta)", xv, beta.value());

  const Eigen::VectorXd mean = xv.rowwise().mean();
  const Matrix centered = xv.colwise() - mean;
  const Eigen::VectorXd inv_std =
      (centered.cwiseAbs2().rowwise().mean().array() + eps).rsqrt().matrix();
  Matrix normed = centered.array().colwise() * inv_std.array();
  Matrix y = (normed.array().rowwise() * gamma.value().row(0).array()).matrix();
  y.rowwise() += beta.value().row(0);

  return x.tape().record(std::move(y), {x, gamma, beta},
                         [x, gamma, beta, normed, inv_std](Tape& tape, const Matrix& g) {
    if (gamma.requires_grad()) tape.accumulate(gamma, g.cwiseProduct(normed).colwise().sum());
    if (beta.requires_grad()) tape.accumulate(beta, g.colwise().sum());
    if (!x.requires_grad()) return;
    const Matrix dn = g.array().rowwise() * gamma.value().row(0).array();
    const Eigen::VectorXd mean_dn = dn.rowwise().mean();
    const Eigen::VectorXd mean_dn_n = dn.cwiseProduct(normed).rowwise().mean();
    Matrix dx = (dn.colwise() - mean_dn) - (normed.array().colwise() * mean_dn_n.array()).matrix();
    dx = dx.array().colwise() * inv_std.array();
    tape.accumulate(x, dx);
  });
}

Tensor mean_pool(const Tensor& a, int axis) {
  const Matrix& x = a.value();
  if (axis == 0) {
    if (x.rows() == 0) throw UsageError("mean_pool: empty axis");
    const double inv = 1.0 / static_cast<double>(x.rows());
    const Eigen::Index rows = x.rows();
    return unary(a, x.colwise().mean(), [inv, rows](const Matrix& g) -> Matrix {
      return g.replicate(rows, 1) * inv;
    });
  }
  if (axis != 1) throw UsageError("mean_pool: axis must be 0 or 1");
  if (x.cols() == 0) throw UsageError("mean_pool: empty axis");
  const double inv = 1.0 / static_cast<double>(x.cols());
  const Eigen::Index cols = x.cols();
  return unary(a, x.rowwise().mean(), [inv, cols](const Matrix& g) -> Matrix {
    return g.replicate(1, cols) * inv;
  });
}

Tensor sum(const Tensor& a) {
  const Eigen::Index rows = a.rows();
  const Eigen::Index cols = a.cols();
  return unary(a, Matrix::Constant(1, 1, a.value().sum()), [rows, cols](const Matrix& g) -> Matrix {
    return Matrix::Constant(rows, cols, g(0, 0));
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

Tensor conv1d(const Tensor& x, const Tensor& kernel) {
  const Matrix& xv = x.value();
  const Matrix& kv = kernel.value();
  const Eigen::Index steps = xv.rows();
  const Eigen::Index c_in = xv.cols();
  if (c_in == 0 || kv.rows() % c_in != 0) shape_error("conv1d", xv, kv);
  const Eigen::Index taps = kv.rows() / c_in;
  const Eigen::Index pad = (taps - 1) / 2;
  if (taps > steps + taps - 1) throw UsageError("conv1d: kernel wider than padded input");

  // im2col: row t holds the taps x C_in window centred on t.
  Matrix cols = Matrix::Zero(steps, taps * c_in);
  for (Eigen::Index t = 0; t < steps; ++t) {
    for (Eigen::Index j = 0; j < taps; ++j) {
      const Eigen::Index src = t + j - pad;
      if (src >= 0 && src < steps) cols.block(t, j * c_in, 1, c_in) = xv.row(src);
    }
  }
  Matrix y = cols * kv;
  return x.tape().record(std::move(y), {x, kernel},
                         [x, kernel, cols, taps, pad, c_in](Tape& tape, const Matrix& g) {
    if (kernel.requires_grad()) tape.accumulate(kernel, cols.transpose() * g);
    if (!x.requires_grad()) return;
    const Matrix dcols = g * kernel.value().transpose();
    const Eigen::Index n = dcols.rows();
    Matrix dx = Matrix::Zero(n, c_in);
    for (Eigen::Index t = 0; t < n; ++t) {
      for (Eigen::Index j = 0; j < taps; ++j) {
        const Eigen::Index src = t + j - pad;
        if (src >= 0 && src < n) dx.row(src) += dcols.block(t, j * c_in, 1, c_in);
      }
    }
    tape.accumulate(x, dx);
  });
}

Tensor cross_entropy(const Tensor& logits, int label) {
  const Matrix& z = logits.value();
  if (z.rows() != 1) throw UsageError("cross_entropy: logits must be a single row, got " + shape(z));
  if (label < 0 || label >= z.cols()) {
    throw UsageError("cross_entropy: label " + std::to_string(label) + " out of range");
  }
  const double m = z.maxCoeff();
  const Eigen::RowVectorXd e = (z.row(0).array() - m).exp().matrix();
  const double lse = m + std::log(e.sum());
  Matrix probs = e / e.sum();
  return unary(logits, Matrix::Constant(1, 1, lse - z(0, label)),
               [probs, label](const Matrix& g) -> Matrix {
                 Matrix d = probs;
                 d(0, label) -= 1.0;
                 return d * g(0, 0);
               });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_error("concat_cols", parts.front().value(), p.value());
    total += p.cols();
  }
  Matrix out(rows, total);
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return parts.front().tape().record(std::move(out), parts, [parts](Tape& tape, const Matrix& g) {
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      tape.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw UsageError("slice_cols: range outside " + shape(a.value()));
  }
  const Eigen::Index rows = a.rows();
  const Eigen::Index cols = a.cols();
  return unary(a, a.value().middleCols(start, count),
               [rows, cols, start, count](const Matrix& g) -> Matrix {
                 Matrix d = Matrix::Zero(rows, cols);
                 d.middleCols(start, count) = g;
                 return d;
               });
}

Tensor lstm(const Tensor& x, const Tensor& w_input, const Tensor& w_recurrent, const Tensor& bias,
            bool reverse) {
  const Matrix& xv = x.value();
  const Matrix& wx = w_input.value();
  const Matrix& wh = w_recurrent.value();
  const Eigen::Index steps = xv.rows();
  const Eigen::Index hidden = wh.rows();
  if (steps == 0) throw UsageError("lstm: empty sequence");
  if (wx.rows() != xv.cols() || wx.cols() != 4 * hidden) shape_error("lstm(w_input)", xv, wx);
  if (wh.cols() != 4 * hidden) shape_error("lstm(w_recurrent)", wh, wx);
  if (bias.rows() != 1 || bias.cols() != 4 * hidden) shape_error("lstm(bias)", wx, bias.value());

  const auto sigm = [](const auto& v) { return (1.0 + (-v.array()).exp()).inverse().matrix(); };

  // Activated gates [i f g o], cell states and tanh(cell), in time order.
  Matrix pre = xv * wx;
  pre.rowwise() += bias.value().row(0);
  Matrix gates(steps, 4 * hidden);
  Matrix cell(steps, hidden);
  Matrix cell_tanh(steps, hidden);
  Matrix h(steps, hidden);

  Eigen::RowVectorXd h_prev = Eigen::RowVectorXd::Zero(hidden);
  Eigen::RowVectorXd c_prev = Eigen::RowVectorXd::Zero(hidden);
  for (Eigen::Index s = 0; s < steps; ++s) {
    const Eigen::Index t = reverse ? steps - 1 - s : s;
    const Eigen::RowVectorXd z = pre.row(t) + h_prev * wh;
    gates.row(t).segment(0, 2 * hidden) = sigm(z.segment(0, 2 * hidden));
    gates.row(t).segment(2 * hidden, hidden) = z.segment(2 * hidden, hidden).array().tanh().matrix();
    gates.row(t).segment(3 * hidden, hidden) = sigm(z.segment(3 * hidden, hidden));
    const auto i = gates.row(t).segment(0, hidden);
    const auto f = gates.row(t).segment(hidden, hidden);
    const auto g = gates.row(t).segment(2 * hidden, hidden);
    const auto o = gates.row(t).segment(3 * hidden, hidden);
    cell.row(t) = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
    cell_tanh.row(t) = cell.row(t).array().tanh().matrix();
    h.row(t) = o.cwiseProduct(cell_tanh.row(t));
    h_prev = h.row(t);
    c_prev = cell.row(t);
  }

  Matrix out = h;
  return x.tape().record(
      std::move(out), {x, w_input, w_recurrent, bias},
      [x, w_input, w_recurrent, bias, gates, cell, cell_tanh, h, reverse, hidden](
          Tape& tape, const Matrix& grad_h) {
        const Matrix& wh_v = w_recurrent.value();
        const Eigen::Index n = grad_h.rows();
        Matrix dz_all(n, 4 * hidden);
        // Row t holds the hidden state that fed step t (zero at the sequence start).
        Matrix h_in = Matrix::Zero(n, hidden);
        Eigen::RowVectorXd dh_next = Eigen::RowVectorXd::Zero(hidden);
        Eigen::RowVectorXd dc_next = Eigen::RowVectorXd::Zero(hidden);
        for (Eigen::Index s = n - 1; s >= 0; --s) {
          const Eigen::Index t = reverse ? n - 1 - s : s;
          const bool first = s == 0;
          const Eigen::Index t_prev = reverse ? t + 1 : t - 1;
          const auto i = gates.row(t).segment(0, hidden).array();
          const auto f = gates.row(t).segment(hidden, hidden).array();
          const auto g = gates.row(t).segment(2 * hidden, hidden).array();
          const auto o = gates.row(t).segment(3 * hidden, hidden).array();
          const auto tc = cell_tanh.row(t).array();

          const Eigen::RowVectorXd dh = grad_h.row(t) + dh_next;
          const Eigen::ArrayXXd c_prev = first ? Eigen::ArrayXXd::Zero(1, hidden)
                                               : Eigen::ArrayXXd(cell.row(t_prev).array());
          const Eigen::ArrayXXd dc = dh.array() * o * (1.0 - tc.square()) + dc_next.array();

          auto dz = dz_all.row(t);
          dz.segment(0, hidden) = (dc * g * i * (1.0 - i)).matrix();
          dz.segment(hidden, hidden) = (dc * c_prev * f * (1.0 - f)).matrix();
          dz.segment(2 * hidden, hidden) = (dc * i * (1.0 - g.square())).matrix();
          dz.segment(3 * hidden, hidden) = (dh.array() * tc * o * (1.0 - o)).matrix();

          dc_next = (dc * f).matrix();
          dh_next = dz * wh_v.transpose();
          if (!first) h_in.row(t) = h.row(t_prev);
        }
        if (w_recurrent.requires_grad()) tape.accumulate(w_recurrent, h_in.transpose() * dz_all);
        if (w_input.requires_grad()) tape.accumulate(w_input, x.value().transpose() * dz_all);
        if (bias.requires_grad()) tape.accumulate(bias, dz_all.colwise().sum());
        if (x.requires_grad()) tape.accumulate(x, dz_all * w_input.value().transpose());
      });
}

}  // namespace serbench
