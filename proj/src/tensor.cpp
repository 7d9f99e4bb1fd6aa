#include "serbench/tensor.hpp"

#include "serbench/error.hpp"

namespace serbench {

Tensor Tape::push(Node node) {
#ifndef NDEBUG
  if (!node.value.allFinite()) throw NumericError("tape: non-finite value recorded");
#endif
  nodes_.push_back(std::move(node));
  return Tensor(this, static_cast<int>(nodes_.size() - 1));
}

Tensor Tape::constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  return push(std::move(node));
}

Tensor Tape::variable(Matrix value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  return push(std::move(node));
}

Tensor Tape::parameter(Parameter& p) {
  Node node;
  node.value = p.value;
  node.parameter = &p;
  node.requires_grad = true;
  return push(std::move(node));
}

template <typename Range>
Tensor Tape::record_range(Matrix value, const Range& inputs, Backward backward) {
  Node node;
  node.value = std::move(value);
  for (const Tensor& in : inputs) {
    if (in.tape_ != this) throw UsageError("tape: input recorded on a different tape");
    node.requires_grad = node.requires_grad || requires_grad(in);
  }
  if (node.requires_grad) node.backward = std::move(backward);
  return push(std::move(node));
}

Tensor Tape::record(Matrix value, std::initializer_list<Tensor> inputs, Backward backward) {
  return record_range(std::move(value), inputs, std::move(backward));
}

Tensor Tape::record(Matrix value, const std::vector<Tensor>& inputs, Backward backward) {
  return record_range(std::move(value), inputs, std::move(backward));
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape_ != this) throw UsageError("backward: loss belongs to another tape");
  const Matrix& v = value(loss);
  if (v.rows() != 1 || v.cols() != 1) {
    throw UsageError("backward: loss must be scalar, got " + std::to_string(v.rows()) + "x" +
                     std::to_string(v.cols()));
  }
  for (auto& node : nodes_) node.grad.resize(0, 0);
  accumulate(loss, Matrix::Ones(1, 1));

  for (auto i = static_cast<std::ptrdiff_t>(loss.id()); i >= 0; --i) {
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (!node.requires_grad || node.grad.size() == 0) continue;
    if (node.backward) node.backward(*this, node.grad);
    if (node.parameter != nullptr) {
      Parameter& p = *node.parameter;
      if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
      p.grad += node.grad;
    }
  }
}

Matrix Tape::grad(const Tensor& t) const {
  const Node& node = nodes_[static_cast<std::size_t>(t.id())];
  if (node.grad.size() == 0) return Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

}  // namespace serbench
