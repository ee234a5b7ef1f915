#include "abris/abris_driver.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace abris {

void AbrisConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch size N must be >= 1");
  if (window < 0) throw ConfigError("window size m must be >= 0");
  if (periodic < 1) throw ConfigError("N_periodic must be >= 1");
  if (!(alpha_sc > 0.0)) throw ConfigError("alpha_sc must be > 0");
  if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
  if (max_model_calls < 1) throw ConfigError("max_model_calls must be >= 1");
  if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
  if (convergence.kind == ConvergenceRule::Kind::RelativeParameterError && !convergence.reference) {
    throw ConfigError("relative-parameter-error convergence needs a reference parameter vector");
  }
}

NormMatrix criterion_norm(const VariationalParams& q, long iteration,
                          const DampingSchedule& damping) {
  if (q.family() == Family::MeanField) return NormMatrix::diag(damped_fisher(q, iteration, damping));
  return NormMatrix::identity();
}

namespace {

// Draws and evaluates one batch of N samples. Samples whose log-joint is not
// finite (or whose evaluation threw) are redrawn up to `max_retries` times.
Batch draw_batch(long iteration, const VariationalParams& q, const AbrisConfig& config,
                 const ProbabilisticModel& model, Rng& rng, long& calls) {
  Batch batch{sample(q, config.batch_size, rng), Vector(), q, iteration};
  try {
    batch.log_joint = batch_evaluate(model, batch.theta, config.parallelism);
  } catch (const BatchEvaluationError& e) {
    batch.log_joint = e.partial;
  }
  calls += config.batch_size;

  for (Index s = 0; s < batch.log_joint.size(); ++s) {
    int retries = 0;
    while (!std::isfinite(batch.log_joint(s))) {
      if (retries++ >= config.max_retries) {
        throw NumericalError("model evaluation failed for sample " + std::to_string(s) +
                             " after " + std::to_string(config.max_retries) + " redraws");
      }
      batch.theta.row(s) = sample(q, 1, rng).row(0);
      ++calls;
      try {
        batch.log_joint(s) = model.log_joint(batch.theta.row(s).transpose());
      } catch (const std::exception&) {
        batch.log_joint(s) = std::numeric_limits<double>::quiet_NaN();
      }
    }
  }
  return batch;
}

}  // namespace

UpdateResult update_sets(long iteration, const VariationalParams& q, EvaluationSets& sets,
                         const AbrisConfig& config, const ProbabilisticModel& model,
                         const DampingSchedule& damping, Rng& sampling_rng, Rng& reference_rng,
                         long calls_so_far) {
  if (iteration < 1) throw InputError("sampling-loop iterations start at 1");
  UpdateResult result;
  auto budget_allows = [&] {
    return calls_so_far + result.calls_made + config.batch_size <= config.max_model_calls;
  };

  if (config.plain_bbvi()) {
    sets.clear();
    result.periodic_triggered = true;
    if (!budget_allows()) {
      result.budget_exhausted = true;
      return result;
    }
    sets.append(draw_batch(iteration, q, config, model, sampling_rng, result.calls_made));
    result.rounds = 1;
    return result;
  }

  bool periodic = iteration % config.periodic == 0;
  const auto window = static_cast<std::size_t>(std::min<long>(config.window, iteration));
  const NormMatrix norm = criterion_norm(q, iteration, damping);

  for (std::size_t round = 0; round < window; ++round) {
    bool ess_fired = true;
    bool score_fired = false;
    if (!sets.empty()) {
      const ISWeights w = is_weights(q, sets);
      const double total_sq = w.weights.squaredNorm();
      result.ess = total_sq > 0.0 ? ess(w.weights) : 0.0;
      ess_fired = config.ess_check && result.ess <= static_cast<double>(config.batch_size);
      if (config.score_check) {
        result.e_is_norm = a_norm(score_error_is(q, sets, w), norm);
        result.e_ref_norm = a_norm(score_error_ref(q, config.batch_size, reference_rng), norm);
        score_fired = result.e_is_norm > config.alpha_sc * result.e_ref_norm;
      }
    } else {
      result.ess = 0.0;
    }

    if (!(ess_fired || score_fired || periodic)) break;
    result.ess_triggered |= ess_fired;
    result.score_triggered |= score_fired;
    result.periodic_triggered |= periodic;

    if (!budget_allows()) {
      result.budget_exhausted = true;
      break;
    }
    sets.append(draw_batch(iteration, q, config, model, sampling_rng, result.calls_made));
    ++result.rounds;
    if (sets.batch_count() > window) sets.evict_oldest();
    periodic = false;
  }
  return result;
}

bool convergence_check(const VariationalParams& q, const ConvergenceRule& rule) {
  if (rule.kind == ConvergenceRule::Kind::BudgetOnly) return false;
  if (!rule.reference) throw ConfigError("relative convergence rule without reference");
  const Vector& ref = *rule.reference;
  if (ref.size() != q.size()) throw ConfigError("reference parameters have the wrong length");
  const double denom = ref.norm();
  const double err = (q.flat() - ref).norm();
  if (denom == 0.0) return err == 0.0;
  return err / denom < rule.tolerance;
}

RunResult run(const ProbabilisticModel& model, const VariationalParams& q_init,
              const AbrisConfig& config, const OptimizerConfig& optimizer_config,
              Rng& sampling_rng, Rng& reference_rng, const RecordSink& sink) {
  config.validate();
  if (model.dim() != q_init.dim()) throw InputError("model and variational dimensions differ");

  RunResult result{q_init, {}, 0, 0, false, false, false, {}};
  VariationalParams& q = result.q;
  Optimizer optimizer(optimizer_config, q.size());
  EvaluationSets sets;

  for (long i = 1; i <= config.max_iterations; ++i) {
    const UpdateResult upd = update_sets(i, q, sets, config, model, optimizer_config.damping,
                                         sampling_rng, reference_rng, result.model_calls);
    result.model_calls += upd.calls_made;
    if (upd.budget_exhausted) result.budget_exhausted = true;
    if (sets.empty()) break;

    IterationRecord rec;
    rec.iteration = i;
    rec.rounds = upd.rounds;
    rec.new_calls = upd.calls_made;
    rec.cumulative_calls = result.model_calls;
    rec.e_is_norm = upd.e_is_norm;
    rec.e_ref_norm = upd.e_ref_norm;
    rec.ess_triggered = upd.ess_triggered;
    rec.score_triggered = upd.score_triggered;
    rec.periodic_triggered = upd.periodic_triggered;

    try {
      const ISWeights w = is_weights(q, sets);
      const GradientEstimate est = elbo_gradient(q, sets, w);
      rec.ess = est.ess;
      rec.elbo = est.elbo;
      rec.baseline = est.baseline.value;
      optimizer.step(q, est.gradient, i);
    } catch (const NumericalError& e) {
      result.diverged = true;
      result.diagnostic = e.what();
    }
    result.iterations = i;

    if (config.keep_records || sink) {
      rec.lambda = q.flat();
      const Vector beta = mixture_coefficients(sets);
      Index j = 0;
      for (const auto& b : sets.batches()) rec.mixture.emplace_back(b.iteration, beta(j++));
      if (sink) sink(rec);
      if (config.keep_records) result.records.push_back(std::move(rec));
    }

    if (result.diverged || result.budget_exhausted) break;
    if (convergence_check(q, config.convergence)) {
      result.converged = true;
      break;
    }
    if (result.model_calls >= config.max_model_calls) {
      result.budget_exhausted = true;
      break;
    }
  }
  return result;
}

}  // namespace abris
