#pragma once

#include <deque>
#include <optional>

#include "abris/variational.hpp"

namespace abris {

/// One sampled batch: the draws, their log-joint values and the variational
/// parameters they were drawn from.
struct Batch {
  Matrix theta;      // N x d
  Vector log_joint;  // N
  VariationalParams lambda;
  long iteration = 0;  // iteration at which the batch was drawn
};

/// The moving window of evaluated batches (samples, log-joints, snapshots).
///
/// Batches are kept oldest first. The concatenated samples and the log-density
/// of the mixture proposal at every stored sample are cached and rebuilt
/// whenever the window changes, since the proposal depends only on the stored
/// snapshots and their batch sizes.
class EvaluationSets {
 public:
  void append(Batch batch);
  void evict_oldest();
  void clear();

  bool empty() const { return batches_.empty(); }
  std::size_t batch_count() const { return batches_.size(); }
  Index total_samples() const { return thetas_.rows(); }
  const std::deque<Batch>& batches() const { return batches_; }

  /// All samples stacked in batch order (M x d).
  const Matrix& thetas() const { return thetas_; }
  /// All log-joint values in the same order.
  const Vector& log_joints() const { return log_joints_; }
  /// ln q_is(theta_s) for every stored sample.
  const Vector& log_proposal() const { return log_proposal_; }

 private:
  void rebuild();

  std::deque<Batch> batches_;
  Matrix thetas_;
  Vector log_joints_;
  Vector log_proposal_;
};

/// Importance weights q(theta | lambda_i) / q_is(theta) for every stored sample.
struct ISWeights {
  Vector weights;
  Vector log_weights;
  Vector log_proposal;
};

/// Diagonal norm matrix; an empty diagonal stands for the identity.
struct NormMatrix {
  std::optional<Vector> diagonal;

  static NormMatrix identity() { return {}; }
  static NormMatrix diag(Vector d) { return {std::move(d)}; }
};

struct BaselineCoefficient {
  double value = 0.0;
  bool degenerate = false;  // zero score variance; value forced to 0
};

struct GradientEstimate {
  Vector gradient;
  double elbo = 0.0;  // IS estimate of the ELBO at the current parameters
  Index samples_used = 0;
  double ess = 0.0;
  BaselineCoefficient baseline;
  double e_is_norm = 0.0;   // filled in by the driver
  double e_ref_norm = 0.0;  // filled in by the driver
};

/// beta_j = |batch j| / M.
Vector mixture_coefficients(const EvaluationSets& sets);

ISWeights is_weights(const VariationalParams& q, const EvaluationSets& sets);

/// (sum w)^2 / sum w^2.
double ess(const Vector& weights);
inline double ess(const ISWeights& w) { return ess(w.weights); }

/// score(theta) * (log_joint - ln q(theta)).
Vector score_gradient_raw(const VariationalParams& q, VectorRef theta, double log_joint);

/// Self-normalised weighted estimate of sum_c Cov(s_c, g_c) / sum_c Var(s_c).
/// `scores` and `raw_gradients` hold one sample per row.
BaselineCoefficient baseline_coefficient(MatrixRef scores, MatrixRef raw_gradients,
                                         VectorRef weights);
BaselineCoefficient baseline_coefficient(const VariationalParams& q, const EvaluationSets& sets,
                                         const ISWeights& weights);

/// IS estimate (1/M) sum w_s [g_sc(theta_s) - a score(theta_s)]. With
/// `fixed_baseline` set, that value replaces the adaptive coefficient.
GradientEstimate elbo_gradient(const VariationalParams& q, const EvaluationSets& sets,
                               const ISWeights& weights,
                               std::optional<double> fixed_baseline = std::nullopt);
GradientEstimate elbo_gradient(const VariationalParams& q, const EvaluationSets& sets,
                               std::optional<double> fixed_baseline = std::nullopt);

/// (1/M) sum score(theta_s) w_s; estimates the zero vector.
Vector score_error_is(const VariationalParams& q, const EvaluationSets& sets,
                      const ISWeights& weights);
Vector score_error_is(const VariationalParams& q, const EvaluationSets& sets);

/// Mean score over n fresh draws from q. Uses no model evaluations.
Vector score_error_ref(const VariationalParams& q, Index n, Rng& rng);

/// sqrt(v^T A^-1 v) for a diagonal positive A, or the Euclidean norm.
template <typename Derived>
double a_norm(const Eigen::MatrixBase<Derived>& v, const NormMatrix& a) {
  using Scalar = typename Derived::Scalar;
  if (!a.diagonal) return static_cast<double>(v.norm());
  const Vector& diag = *a.diagonal;
  if (diag.size() != v.size()) throw InputError("norm matrix size does not match vector");
  if ((diag.array() <= 0.0).any() || !diag.allFinite()) {
    throw NumericalError("norm matrix has a non-positive diagonal entry");
  }
  Scalar acc{0};
  for (Index j = 0; j < v.size(); ++j) acc += v(j) * v(j) / static_cast<Scalar>(diag(j));
  return static_cast<double>(std::sqrt(acc));
}

}  // namespace abris
