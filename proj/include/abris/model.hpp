#pragma once

#include <atomic>
#include <functional>
#include <vector>

#include "abris/types.hpp"

namespace abris {

/// Black-box map theta -> ln pi(y_obs, theta). Implementations must be safe to
/// call concurrently; no gradients are required.
class ProbabilisticModel {
 public:
  virtual ~ProbabilisticModel() = default;
  virtual Index dim() const = 0;
  virtual double log_joint(VectorRef theta) const = 0;
};

/// Adapts a callable into a ProbabilisticModel.
class FunctionModel final : public ProbabilisticModel {
 public:
  FunctionModel(Index dim, std::function<double(VectorRef)> fn) : dim_(dim), fn_(std::move(fn)) {}
  Index dim() const override { return dim_; }
  double log_joint(VectorRef theta) const override { return fn_(theta); }

 private:
  Index dim_;
  std::function<double(VectorRef)> fn_;
};

/// Counts every evaluation forwarded to the wrapped model.
class CountingModel final : public ProbabilisticModel {
 public:
  explicit CountingModel(const ProbabilisticModel& inner) : inner_(inner) {}
  Index dim() const override { return inner_.dim(); }
  double log_joint(VectorRef theta) const override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return inner_.log_joint(theta);
  }
  long calls() const { return calls_.load(); }

 private:
  const ProbabilisticModel& inner_;
  mutable std::atomic<long> calls_{0};
};

/// Thrown after a batch completes when one or more rows raised. `partial`
/// holds the successful values with NaN in the failed rows.
struct BatchEvaluationError : std::runtime_error {
  BatchEvaluationError(const std::string& what, std::vector<Index> rows, Vector partial)
      : std::runtime_error(what), failed_rows(std::move(rows)), partial(std::move(partial)) {}
  std::vector<Index> failed_rows;
  Vector partial;
};

/// Evaluates every row of `thetas` with at most `parallelism` concurrent
/// evaluations. Results are in input order and do not depend on the limit.
Vector batch_evaluate(const ProbabilisticModel& model, MatrixRef thetas, int parallelism = 1);

}  // namespace abris
