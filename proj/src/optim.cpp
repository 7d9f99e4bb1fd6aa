#include "serbench/optim.hpp"

#include <cmath>
#include <string>

#include "serbench/error.hpp"
#include "serbench/grad_check.hpp"

namespace serbench {

void adam_step(std::span<Parameter* const> params, AdamState& state, double lr) {
  if (state.first_moment.empty()) {
    for (const Parameter* p : params) {
      state.first_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      state.second_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw UsageError("adam_step: parameter list changed since the state was created");
  }
  for (const Parameter* p : params) {
    if (!p->grad.allFinite()) {
      throw NumericError("adam_step: non-finite gradient in parameter '" + p->name + "'");
    }
  }

  ++state.step;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
      throw UsageError("adam_step: moment shape mismatch for '" + p.name + "'");
    }
    m = state.beta1 * m + (1.0 - state.beta1) * p.grad;
    v = state.beta2 * v + (1.0 - state.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (m.array() / correction1) /
                       ((v.array() / correction2).sqrt() + state.eps);
  }
}

void zero_grad(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (Parameter* p : params) p->grad *= factor;
  }
  return norm;
}

double lr_schedule(double base, int epoch, const LrSchedule& schedule) {
  if (epoch < 0) throw UsageError("lr_schedule: negative epoch");
  if (schedule.policy == LrSchedule::Policy::fixed) return base;
  if (!(schedule.gamma > 0.0 && schedule.gamma <= 1.0)) {
    throw UsageError("lr_schedule: gamma must lie in (0, 1]");
  }
  return base * std::pow(schedule.gamma, static_cast<double>(epoch));
}

double grad_check(const TensorFunction& f, const Matrix& x, double h) {
  Matrix analytic;
  {
    Tape tape;
    const Tensor input = tape.variable(x);
    const Tensor out = f(tape, input);
    if (out.rows() != 1 || out.cols() != 1) throw UsageError("grad_check: function must be scalar");
    tape.backward(out);
    analytic = tape.grad(input);
  }
  const auto evaluate = [&](const Matrix& point) {
    Tape tape;
    return f(tape, tape.constant(point)).value()(0, 0);
  };
  double worst = 0.0;
  Matrix probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = probe(i);
    probe(i) = saved + h;
    const double up = evaluate(probe);
    probe(i) = saved - h;
    const double down = evaluate(probe);
    probe(i) = saved;
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic(i) - numeric) / std::max(1.0, std::abs(analytic(i))));
  }
  return worst;
}

double grad_check_parameters(const std::function<Tensor(Tape&)>& loss,
                             std::span<Parameter* const> params, double h) {
  zero_grad(params);
  {
    Tape tape;
    const Tensor out = loss(tape);
    if (out.rows() != 1 || out.cols() != 1) throw UsageError("grad_check: loss must be scalar");
    tape.backward(out);
  }
  const auto evaluate = [&] {
    Tape tape;
    return loss(tape).value()(0, 0);
  };
  double worst = 0.0;
  for (Parameter* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double saved = p->value(i);
      p->value(i) = saved + h;
      const double up = evaluate();
      p->value(i) = saved - h;
      const double down = evaluate();
      p->value(i) = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad(i);
      worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)));
    }
  }
  return worst;
}

}  // namespace serbench
