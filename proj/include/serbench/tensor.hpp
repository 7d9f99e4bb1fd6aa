#pragma once

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

namespace serbench {

/// Dense float64 matrix; every tensor in the library is two-dimensional
/// (vectors are 1 x n rows).
using Matrix = Eigen::MatrixXd;

/// A trainable weight with its accumulated gradient.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
/// is alive.
class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Records executed operations so that gradients can be propagated in
/// reverse. Nodes are appended in execution order, which is a topological
/// order of the computation.
class Tape {
 public:
  /// Receives dLoss/dOutput and accumulates into the op's inputs.
  using Backward = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor constant(Matrix value);
  /// Leaf whose gradient stays on the tape (see grad()).
  Tensor variable(Matrix value);
  /// Leaf bound to a Parameter; backward() adds into `p.grad`.
  Tensor parameter(Parameter& p);

  /// Appends an op output. `backward` is only kept when an input requires a
  /// gradient.
  Tensor record(Matrix value, std::initializer_list<Tensor> inputs, Backward backward);
  Tensor record(Matrix value, const std::vector<Tensor>& inputs, Backward backward);

  template <typename Derived>
  void accumulate(const Tensor& t, const Eigen::MatrixBase<Derived>& g) {
    Node& node = nodes_[static_cast<std::size_t>(t.id())];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) node.grad = g;
    else node.grad += g;
  }

  /// Reverse pass from a 1 x 1 loss.
  void backward(const Tensor& loss);

  /// Gradient of the loss with respect to `t` after backward(); zero when no
  /// gradient reached it.
  Matrix grad(const Tensor& t) const;

  const Matrix& value(const Tensor& t) const { return nodes_[static_cast<std::size_t>(t.id())].value; }
  bool requires_grad(const Tensor& t) const {
    return nodes_[static_cast<std::size_t>(t.id())].requires_grad;
  }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Parameter* parameter = nullptr;
    bool requires_grad = false;
    Backward backward;
  };

  Tensor push(Node node);
  template <typename Range>
  Tensor record_range(Matrix value, const Range& inputs, Backward backward);

  // deque keeps element references stable across appends.
  std::deque<Node> nodes_;
};

inline const Matrix& Tensor::value() const { return tape_->value(*this); }
inline bool Tensor::requires_grad() const { return tape_->requires_grad(*this); }

}  // namespace serbench
