#include "abris/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace abris {

double damping(long iteration, const DampingSchedule& sched) {
  if (iteration < sched.i_b) return sched.eta_tilde;
  const double decay = std::exp(-static_cast<double>(iteration - sched.i_b) /
                                static_cast<double>(sched.i_b));
  return std::max(sched.eta_tilde * decay, sched.eta_bound);
}

Vector damped_fisher(const VariationalParams& q, long iteration, const DampingSchedule& sched) {
  return fisher_information(q).array() + damping(iteration, sched);
}

Vector precondition(VectorRef grad, const VariationalParams& q, long iteration,
                    const DampingSchedule& sched) {
  if (q.family() != Family::MeanField) return grad;
  if (grad.size() != q.size()) throw InputError("gradient length does not match parameters");
  const Vector f = damped_fisher(q, iteration, sched);
  if (!(f.array() > 0.0).all()) throw NumericalError("damped Fisher diagonal is not positive");
  return grad.array() / f.array();
}

Vector clip(VectorRef grad, double threshold) {
  if (!(threshold > 0.0)) throw InputError("clipping threshold must be positive");
  const double norm = grad.norm();
  if (norm > threshold) return grad * (threshold / norm);
  return grad;
}

double lr_schedule(long iteration, double base_lr, const LrSchedule& rule) {
  switch (rule.rule) {
    case LrSchedule::Rule::Constant:
      return base_lr;
    case LrSchedule::Rule::StepDecay:
      return base_lr * std::pow(rule.factor, static_cast<double>(iteration / rule.interval));
  }
  return base_lr;
}

Vector adam_step(AdamState& state, VectorRef grad, double lr) {
  if (grad.size() != state.m.size()) throw InputError("Adam state has the wrong length");
  if (!grad.allFinite()) throw NumericalError("gradient passed to Adam is not finite");
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  return lr * ((state.m / c1).array() / ((state.v / c2).array().sqrt() + state.eps)).matrix();
}

Vector regularized_gradient(VectorRef grad, const VariationalParams& q, double alpha_reg) {
  if (q.family() != Family::Mixture) {
    throw UnsupportedFamily("weight regularisation applies to mixture families only");
  }
  Vector out = grad;
  out.head(q.components()) -= 2.0 * alpha_reg * q.logits();
  return out;
}

Optimizer::Optimizer(OptimizerConfig config, Index parameter_count)
    : config_(std::move(config)), adam_(parameter_count) {}

Vector Optimizer::step(VariationalParams& q, VectorRef raw_gradient, long iteration) {
  Vector g = raw_gradient;
  if (q.family() == Family::Mixture) {
    const double alpha = config_.alpha_reg.value_or(4.0 * static_cast<double>(q.components()));
    g = regularized_gradient(g, q, alpha);
  } else if (config_.natural_gradient) {
    g = precondition(g, q, iteration, config_.damping);
  }
  g = clip(g, config_.clip_threshold);
  const Vector delta = adam_step(adam_, g, lr_schedule(iteration, config_.base_lr, config_.schedule));
  const Vector updated = q.flat() + delta;
  if (!updated.allFinite()) throw NumericalError("optimizer produced non-finite parameters");
  q.set_flat(updated);
  return delta;
}

}  // namespace abris
