#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "abris/estimators.hpp"
#include "abris/model.hpp"
#include "abris/optimizer.hpp"

namespace abris {

struct ConvergenceRule {
  enum class Kind { RelativeParameterError, BudgetOnly };
  Kind kind = Kind::BudgetOnly;
  std::optional<Vector> reference;  // lambda_opt for the relative rule
  double tolerance = 1e-3;

  static ConvergenceRule relative(Vector reference, double tol = 1e-3) {
    return {Kind::RelativeParameterError, std::move(reference), tol};
  }
  static ConvergenceRule budget_only() { return {}; }
};

/// Sampling-loop settings. `window == 0` selects plain BBVI: the sets are
/// cleared and one fresh batch is drawn every iteration.
struct AbrisConfig {
  Index batch_size = 8;  // N
  Index window = 20;     // m
  long periodic = 50;    // N_periodic
  double alpha_sc = 1.0;
  long max_iterations = 150000;
  long max_model_calls = 1000000;
  bool ess_check = true;
  bool score_check = true;
  int parallelism = 1;
  int max_retries = 10;  // redraws per failed sample before aborting
  ConvergenceRule convergence;
  bool keep_records = true;

  void validate() const;
  bool plain_bbvi() const { return window == 0; }
};

struct IterationRecord {
  long iteration = 0;
  int rounds = 0;  // batches drawn in the sampling loop
  long new_calls = 0;
  long cumulative_calls = 0;
  double ess = 0.0;
  double e_is_norm = 0.0;
  double e_ref_norm = 0.0;
  bool ess_triggered = false;
  bool score_triggered = false;
  bool periodic_triggered = false;
  double elbo = 0.0;
  double baseline = 0.0;
  Vector lambda;  // parameters after the update
  // (iteration the batch was drawn at, beta) for every mixture component.
  std::vector<std::pair<long, double>> mixture;
};

using RecordSink = std::function<void(const IterationRecord&)>;

struct UpdateResult {
  long calls_made = 0;
  int rounds = 0;
  bool ess_triggered = false;
  bool score_triggered = false;
  bool periodic_triggered = false;
  bool budget_exhausted = false;
  double ess = 0.0;
  double e_is_norm = 0.0;
  double e_ref_norm = 0.0;
};

/// Norm matrix of the score criterion: damped Fisher diagonal for mean-field,
/// identity for mixtures.
NormMatrix criterion_norm(const VariationalParams& q, long iteration,
                          const DampingSchedule& damping);

/// The sampling loop for iteration `iteration` (>= 1). Draws batches from `q`
/// while any criterion fires, up to min(m, i) rounds, keeping at most min(m, i)
/// batches. `calls_so_far` is checked against the model-call budget.
UpdateResult update_sets(long iteration, const VariationalParams& q, EvaluationSets& sets,
                         const AbrisConfig& config, const ProbabilisticModel& model,
                         const DampingSchedule& damping, Rng& sampling_rng, Rng& reference_rng,
                         long calls_so_far = 0);

bool convergence_check(const VariationalParams& q, const ConvergenceRule& rule);

struct RunResult {
  VariationalParams q;
  std::vector<IterationRecord> records;
  long iterations = 0;
  long model_calls = 0;
  bool converged = false;
  bool budget_exhausted = false;
  bool diverged = false;
  std::string diagnostic;
};

/// Runs importance-sampling-enhanced BBVI from `q_init`. Stops on
/// convergence, iteration limit or model-call budget; optimizer divergence is
/// reported through `RunResult::diverged` rather than thrown.
RunResult run(const ProbabilisticModel& model, const VariationalParams& q_init,
              const AbrisConfig& config, const OptimizerConfig& optimizer, Rng& sampling_rng,
              Rng& reference_rng, const RecordSink& sink = {});

}  // namespace abris
