#pragma once

#include <functional>
#include <span>

#include "serbench/tensor.hpp"

namespace serbench {

/// Scalar-valued function of one input tensor, built on the given tape.
using TensorFunction = std::function<Tensor(Tape&, const Tensor&)>;

/// max_i |analytic_i - central_difference_i| / max(1, |analytic_i|) over the
/// coordinates of `x`.
double grad_check(const TensorFunction& f, const Matrix& x, double h = 1e-5);

/// Same measure over every coordinate of `params`; `loss` rebuilds the
/// computation on a fresh tape from the current parameter values.
double grad_check_parameters(const std::function<Tensor(Tape&)>& loss,
                             std::span<Parameter* const> params, double h = 1e-5);

}  // namespace serbench
