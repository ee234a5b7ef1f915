#pragma once

#include <optional>

#include "abris/variational.hpp"

namespace abris {

/// Exponential damping of the Fisher information: constant `eta_tilde` until
/// iteration `i_b`, then exp decay with rate 1/i_b, floored at `eta_bound`.
struct DampingSchedule {
  double eta_tilde = 1e-2;
  long i_b = 50;
  double eta_bound = 1e-6;
};

double damping(long iteration, const DampingSchedule& sched);

/// (F + eta I)^-1 grad for mean-field; mixtures pass through unchanged.
Vector precondition(VectorRef grad, const VariationalParams& q, long iteration,
                    const DampingSchedule& sched);

/// Damped Fisher diagonal F + eta I (mean-field only).
Vector damped_fisher(const VariationalParams& q, long iteration, const DampingSchedule& sched);

/// Rescales to L2 norm `threshold` if longer.
Vector clip(VectorRef grad, double threshold);

struct LrSchedule {
  enum class Rule { Constant, StepDecay };
  Rule rule = Rule::Constant;
  double factor = 0.9;
  long interval = 1000;
};

double lr_schedule(long iteration, double base_lr, const LrSchedule& rule);

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(Index size = 0) : m(Vector::Zero(size)), v(Vector::Zero(size)) {}
};

/// One bias-corrected Adam step in the ascent convention: lambda += delta.
Vector adam_step(AdamState& state, VectorRef grad, double lr);

/// Adds the gradient of -alpha_reg |logits|^2 to the logit block.
Vector regularized_gradient(VectorRef grad, const VariationalParams& q, double alpha_reg);

struct OptimizerConfig {
  double base_lr = 0.1;
  LrSchedule schedule;
  DampingSchedule damping;
  double clip_threshold = 1e6;
  bool natural_gradient = true;          // mean-field only
  std::optional<double> alpha_reg;       // mixtures; defaults to 4K
};

/// Stochastic ascent with the fixed stage order:
/// regularisation (mixtures) -> Fisher preconditioning (mean-field) ->
/// clipping -> Adam -> parameter update.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, Index parameter_count);

  /// Returns the parameter increment and applies it to `q`.
  Vector step(VariationalParams& q, VectorRef raw_gradient, long iteration);

  const OptimizerConfig& config() const { return config_; }
  const AdamState& state() const { return adam_; }

 private:
  OptimizerConfig config_;
  AdamState adam_;
};

}  // namespace abris
