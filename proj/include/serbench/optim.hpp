#pragma once

#include <span>
#include <vector>

#include "serbench/tensor.hpp"

namespace serbench {

/// Bias-corrected Adam moments for an ordered parameter list.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
};

/// One Adam update with learning rate `lr`. Throws NumericError naming the
/// first parameter with a non-finite gradient; no parameter is modified then.
void adam_step(std::span<Parameter* const> params, AdamState& state, double lr);

void zero_grad(std::span<Parameter* const> params);

/// Rescales gradients so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

struct LrSchedule {
  enum class Policy { fixed, step_decay };
  Policy policy = Policy::fixed;
  double gamma = 0.95;
};

/// fixed: base; step_decay: base * gamma^epoch.
double lr_schedule(double base, int epoch, const LrSchedule& schedule);

}  // namespace serbench
