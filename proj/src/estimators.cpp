#include "abris/estimators.hpp"

#include <cmath>
#include <string>

namespace abris {

void EvaluationSets::append(Batch batch) {
  if (batch.theta.rows() != batch.log_joint.size() || batch.theta.rows() == 0) {
    throw InputError("batch samples and log-joint values are misaligned");
  }
  if (batch.theta.cols() != batch.lambda.dim()) {
    throw InputError("batch samples do not match the snapshot dimension");
  }
  if (!batches_.empty() && !batches_.front().lambda.same_layout(batch.lambda)) {
    throw InputError("batch snapshot has a different variational layout");
  }
  batches_.push_back(std::move(batch));
  rebuild();
}

void EvaluationSets::evict_oldest() {
  if (batches_.empty()) throw StateError("cannot evict from empty evaluation sets");
  batches_.pop_front();
  rebuild();
}

void EvaluationSets::clear() {
  batches_.clear();
  rebuild();
}

void EvaluationSets::rebuild() {
  if (batches_.empty()) {
    thetas_.resize(0, 0);
    log_joints_.resize(0);
    log_proposal_.resize(0);
    return;
  }
  Index m = 0;
  for (const auto& b : batches_) m += b.theta.rows();
  const Index d = batches_.front().theta.cols();
  thetas_.resize(m, d);
  log_joints_.resize(m);
  Index row = 0;
  for (const auto& b : batches_) {
    thetas_.middleRows(row, b.theta.rows()) = b.theta;
    log_joints_.segment(row, b.theta.rows()) = b.log_joint;
    row += b.theta.rows();
  }

  // ln sum_j beta_j q(theta | lambda_j), accumulated with a running log-sum-exp.
  const auto nb = static_cast<Index>(batches_.size());
  Matrix terms(m, nb);
  for (Index j = 0; j < nb; ++j) {
    const auto& b = batches_[static_cast<std::size_t>(j)];
    const double log_beta = std::log(static_cast<double>(b.theta.rows()) / static_cast<double>(m));
    terms.col(j) = log_density_rows(b.lambda, thetas_).array() + log_beta;
  }
  const Vector mx = terms.rowwise().maxCoeff();
  log_proposal_ = mx.array() + (terms.colwise() - mx).array().exp().rowwise().sum().log();
}

Vector mixture_coefficients(const EvaluationSets& sets) {
  if (sets.empty()) throw StateError("mixture coefficients of empty evaluation sets");
  Vector beta(static_cast<Index>(sets.batch_count()));
  const auto m = static_cast<double>(sets.total_samples());
  Index j = 0;
  for (const auto& b : sets.batches()) beta(j++) = static_cast<double>(b.theta.rows()) / m;
  return beta;
}

ISWeights is_weights(const VariationalParams& q, const EvaluationSets& sets) {
  if (sets.empty()) throw StateError("importance weights of empty evaluation sets");
  if (!sets.batches().front().lambda.same_layout(q)) {
    throw InputError("stored snapshots do not share the current variational layout");
  }
  ISWeights w;
  w.log_proposal = sets.log_proposal();
  w.log_weights = log_density_rows(q, sets.thetas()) - w.log_proposal;
  w.weights = w.log_weights.array().exp();
  for (Index s = 0; s < w.weights.size(); ++s) {
    if (!std::isfinite(w.weights(s)) || !std::isfinite(w.log_proposal(s))) {
      throw NumericalError("non-finite importance weight at sample " + std::to_string(s));
    }
  }
  return w;
}

double ess(const Vector& weights) {
  if (weights.size() == 0) throw StateError("effective sample size of an empty weight vector");
  const double sq = weights.squaredNorm();
  if (sq <= 0.0) throw NumericalError("all importance weights are zero");
  const double sum = weights.sum();
  return sum * sum / sq;
}

Vector score_gradient_raw(const VariationalParams& q, VectorRef theta, double log_joint) {
  if (!std::isfinite(log_joint)) throw InputError("log-joint value is not finite");
  return score(q, theta) * (log_joint - log_density(q, theta));
}

BaselineCoefficient baseline_coefficient(MatrixRef scores, MatrixRef raw_gradients,
                                         VectorRef weights) {
  if (scores.rows() < 2) throw InputError("baseline coefficient needs at least two samples");
  if (scores.rows() != raw_gradients.rows() || scores.cols() != raw_gradients.cols() ||
      scores.rows() != weights.size()) {
    throw InputError("baseline inputs are misaligned");
  }
  const double total = weights.sum();
  if (!(total > 0.0)) return {0.0, true};
  const Vector wn = weights / total;
  const Eigen::RowVectorXd mean_s = wn.transpose() * scores;
  const Eigen::RowVectorXd mean_g = wn.transpose() * raw_gradients;
  const Matrix ds = scores.rowwise() - mean_s;
  const Matrix dg = raw_gradients.rowwise() - mean_g;
  const double cov = (wn.transpose() * ds.cwiseProduct(dg)).sum();
  const double var = (wn.transpose() * ds.cwiseProduct(ds)).sum();
  if (!(var > 0.0)) return {0.0, true};
  return {cov / var, false};
}

namespace {

struct SampleTerms {
  Matrix scores;
  Matrix raw;
  Vector inner;  // log_joint - ln q
};

SampleTerms sample_terms(const VariationalParams& q, const EvaluationSets& sets) {
  SampleTerms t;
  t.scores = score_rows(q, sets.thetas());
  t.inner = sets.log_joints() - log_density_rows(q, sets.thetas());
  t.raw = t.scores.array().colwise() * t.inner.array();
  return t;
}

}  // namespace

BaselineCoefficient baseline_coefficient(const VariationalParams& q, const EvaluationSets& sets,
                                         const ISWeights& weights) {
  const auto t = sample_terms(q, sets);
  return baseline_coefficient(t.scores, t.raw, weights.weights);
}

GradientEstimate elbo_gradient(const VariationalParams& q, const EvaluationSets& sets,
                               const ISWeights& weights, std::optional<double> fixed_baseline) {
  const Index m = sets.total_samples();
  if (weights.weights.size() != m) throw InputError("weights do not match evaluation sets");
  const auto t = sample_terms(q, sets);

  GradientEstimate est;
  est.samples_used = m;
  est.ess = ess(weights.weights);
  if (fixed_baseline) {
    est.baseline = {*fixed_baseline, false};
  } else if (m >= 2) {
    est.baseline = baseline_coefficient(t.scores, t.raw, weights.weights);
  } else {
    est.baseline = {0.0, true};
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  est.gradient = inv_m * ((t.raw - est.baseline.value * t.scores).transpose() * weights.weights);
  est.elbo = inv_m * weights.weights.dot(t.inner);
  if (!est.gradient.allFinite()) throw NumericalError("ELBO gradient estimate is not finite");
  return est;
}

GradientEstimate elbo_gradient(const VariationalParams& q, const EvaluationSets& sets,
                               std::optional<double> fixed_baseline) {
  return elbo_gradient(q, sets, is_weights(q, sets), fixed_baseline);
}

Vector score_error_is(const VariationalParams& q, const EvaluationSets& sets,
                      const ISWeights& weights) {
  const Index m = sets.total_samples();
  if (weights.weights.size() != m) throw InputError("weights do not match evaluation sets");
  return score_rows(q, sets.thetas()).transpose() * weights.weights / static_cast<double>(m);
}

Vector score_error_is(const VariationalParams& q, const EvaluationSets& sets) {
  return score_error_is(q, sets, is_weights(q, sets));
}

Vector score_error_ref(const VariationalParams& q, Index n, Rng& rng) {
  const Matrix draws = sample(q, n, rng);
  return score_rows(q, draws).colwise().mean().transpose();
}

}  // namespace abris
