#include "abris/model.hpp"

#include <algorithm>
#include <limits>
#include <mutex>
#include <string>
#include <thread>

namespace abris {

Vector batch_evaluate(const ProbabilisticModel& model, MatrixRef thetas, int parallelism) {
  if (parallelism < 1) throw InputError("parallelism limit must be >= 1");
  if (thetas.cols() != model.dim()) throw InputError("batch dimension does not match the model");
  const Index n = thetas.rows();
  Vector out = Vector::Constant(n, std::numeric_limits<double>::quiet_NaN());
  std::vector<Index> failed;
  std::string first_message;
  std::mutex failure_mutex;

  auto evaluate_row = [&](Index row) {
    try {
      out(row) = model.log_joint(thetas.row(row).transpose());
    } catch (const std::exception& e) {
      std::lock_guard lock(failure_mutex);
      failed.push_back(row);
      if (first_message.empty()) first_message = e.what();
    }
  };

  const auto workers = static_cast<Index>(std::min<Index>(parallelism, n));
  if (workers <= 1) {
    for (Index row = 0; row < n; ++row) evaluate_row(row);
  } else {
    std::atomic<Index> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (Index w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (Index row = next++; row < n; row = next++) evaluate_row(row);
      });
    }
  }

  if (!failed.empty()) {
    std::sort(failed.begin(), failed.end());
    std::string msg = "model evaluation failed for rows";
    for (Index r : failed) msg += " " + std::to_string(r);
    msg += ": " + first_message;
    throw BatchEvaluationError(msg, std::move(failed), std::move(out));
  }
  return out;
}

}  // namespace abris
