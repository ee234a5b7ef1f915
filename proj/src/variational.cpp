#include "abris/variational.hpp"

#include <cmath>
#include <string>

namespace abris {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)

void check_theta(const VariationalParams& q, Index n) {
  if (n != q.dim()) {
    throw InputError("theta has dimension " + std::to_string(n) + ", expected " +
                     std::to_string(q.dim()));
  }
}

void check_finite(const Vector& lambda) {
  if (!lambda.allFinite()) throw InputError("variational parameters are not finite");
}

// Log-density of one diagonal Gaussian component for each row of `thetas`.
Vector component_log_density(const VariationalParams& q, Index k, MatrixRef thetas) {
  const Eigen::RowVectorXd mu = q.mean(k).transpose();
  const Eigen::RowVectorXd inv_std = (-q.log_std(k).array()).exp().matrix().transpose();
  const double norm = -q.log_std(k).sum() - static_cast<double>(q.dim()) * kHalfLog2Pi;
  const Matrix z = (thetas.rowwise() - mu).array().rowwise() * inv_std.array();
  return norm - 0.5 * z.rowwise().squaredNorm().array();
}

Vector log_softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits.array() - lse;
}

}  // namespace

VariationalParams::VariationalParams(Family family, Index dim, Index components, Vector lambda)
    : family_(family), dim_(dim), components_(components), lambda_(std::move(lambda)) {}

VariationalParams VariationalParams::mean_field(VectorRef mu, VectorRef log_std) {
  if (mu.size() != log_std.size() || mu.size() == 0) {
    throw InputError("mean and log-std blocks must have equal, non-zero length");
  }
  Vector lambda(2 * mu.size());
  lambda << mu, log_std;
  return VariationalParams(Family::MeanField, mu.size(), 1, std::move(lambda));
}

VariationalParams VariationalParams::mean_field(Index dim) {
  return mean_field(Vector::Zero(dim), Vector::Zero(dim));
}

VariationalParams VariationalParams::mixture(VectorRef logits, MatrixRef mu, MatrixRef log_std) {
  // mu and log_std are K x d, one row per component.
  const Index k = logits.size();
  if (k < 1 || mu.rows() != k || log_std.rows() != k || mu.cols() != log_std.cols() ||
      mu.cols() == 0) {
    throw InputError("mixture blocks have inconsistent shapes");
  }
  const Index d = mu.cols();
  Vector lambda(k * (2 * d + 1));
  lambda.head(k) = logits;
  for (Index c = 0; c < k; ++c) {
    lambda.segment(k + c * d, d) = mu.row(c).transpose();
    lambda.segment(k + (k + c) * d, d) = log_std.row(c).transpose();
  }
  return VariationalParams(Family::Mixture, d, k, std::move(lambda));
}

VariationalParams VariationalParams::from_flat(Family family, Index dim, Index components,
                                               VectorRef lambda) {
  if (dim < 1 || components < 1) throw InputError("dimension and component count must be >= 1");
  const Index expected = family == Family::MeanField ? 2 * dim : components * (2 * dim + 1);
  if (family == Family::MeanField && components != 1) {
    throw InputError("mean-field family has exactly one component");
  }
  if (lambda.size() != expected) {
    throw InputError("flat parameter vector has length " + std::to_string(lambda.size()) +
                     ", expected " + std::to_string(expected));
  }
  return VariationalParams(family, dim, components, lambda);
}

void VariationalParams::set_flat(VectorRef lambda) {
  if (lambda.size() != lambda_.size()) throw InputError("flat parameter vector has wrong length");
  lambda_ = lambda;
}

Vector VariationalParams::weights() const {
  if (family_ == Family::MeanField) return Vector::Ones(1);
  return log_softmax(logits()).array().exp();
}

double log_density(const VariationalParams& q, VectorRef theta) {
  check_theta(q, theta.size());
  return log_density_rows(q, theta.transpose())(0);
}

Vector log_density_rows(const VariationalParams& q, MatrixRef thetas) {
  check_theta(q, thetas.cols());
  check_finite(q.flat());
  if (q.family() == Family::MeanField) return component_log_density(q, 0, thetas);

  const Index k = q.components();
  const Vector log_w = log_softmax(q.logits());
  Matrix terms(thetas.rows(), k);
  for (Index c = 0; c < k; ++c) terms.col(c) = component_log_density(q, c, thetas).array() + log_w(c);
  const Vector mx = terms.rowwise().maxCoeff();
  return mx.array() + ((terms.colwise() - mx).array().exp().rowwise().sum()).log();
}

Matrix sample(const VariationalParams& q, Index n, Rng& rng) {
  if (n < 1) throw InputError("sample count must be >= 1");
  check_finite(q.flat());
  const Index d = q.dim();
  Matrix out(n, d);
  std::normal_distribution<double> normal;
  if (q.family() == Family::MeanField) {
    const Vector sd = q.log_std().array().exp();
    for (Index s = 0; s < n; ++s)
      for (Index j = 0; j < d; ++j) out(s, j) = q.mean()(j) + sd(j) * normal(rng);
    return out;
  }
  const Vector w = q.weights();
  std::discrete_distribution<Index> pick(w.data(), w.data() + w.size());
  for (Index s = 0; s < n; ++s) {
    const Index c = pick(rng);
    for (Index j = 0; j < d; ++j)
      out(s, j) = q.mean(c)(j) + std::exp(q.log_std(c)(j)) * normal(rng);
  }
  return out;
}

Vector score(const VariationalParams& q, VectorRef theta) {
  check_theta(q, theta.size());
  return score_rows(q, theta.transpose()).row(0).transpose();
}

Matrix score_rows(const VariationalParams& q, MatrixRef thetas) {
  check_theta(q, thetas.cols());
  check_finite(q.flat());
  const Index n = thetas.rows();
  const Index d = q.dim();
  const Index k = q.components();
  Matrix out = Matrix::Zero(n, q.size());

  Matrix resp = Matrix::Ones(n, 1);
  Vector w = Vector::Ones(1);
  if (q.family() == Family::Mixture) {
    const Vector log_w = log_softmax(q.logits());
    w = log_w.array().exp();
    Matrix terms(n, k);
    for (Index c = 0; c < k; ++c) terms.col(c) = component_log_density(q, c, thetas).array() + log_w(c);
    const Vector mx = terms.rowwise().maxCoeff();
    resp = (terms.colwise() - mx).array().exp();
    resp.array().colwise() /= resp.rowwise().sum().array();
    // d ln q / d logit_j = r_j - w_j
    out.leftCols(k) = resp.rowwise() - w.transpose();
  }

  for (Index c = 0; c < k; ++c) {
    const Eigen::RowVectorXd mu = q.mean(c).transpose();
    const Eigen::RowVectorXd inv_var = (-2.0 * q.log_std(c).array()).exp().matrix().transpose();
    const Matrix diff = thetas.rowwise() - mu;
    const Matrix z = diff.array().rowwise() * inv_var.array();
    out.middleCols(q.mean_offset(c), d) = z.array().colwise() * resp.col(c).array();
    out.middleCols(q.log_std_offset(c), d) =
        (z.array() * diff.array() - 1.0).colwise() * resp.col(c).array();
  }
  return out;
}

Vector fisher_information(const VariationalParams& q) {
  if (q.family() != Family::MeanField) {
    throw UnsupportedFamily("Fisher information is only available for the mean-field family");
  }
  Vector f(q.size());
  f.head(q.dim()) = (-2.0 * q.log_std().array()).exp();
  f.tail(q.dim()).setConstant(2.0);
  return f;
}

VariationalParams initial_mean_field(Index dim, Rng& rng) {
  std::uniform_real_distribution<double> mu_dist(-0.1, 0.1);
  std::uniform_real_distribution<double> c_dist(std::log(0.2), std::log(0.4));
  Vector mu(dim), c(dim);
  for (Index j = 0; j < dim; ++j) mu(j) = mu_dist(rng);
  for (Index j = 0; j < dim; ++j) c(j) = c_dist(rng);
  return VariationalParams::mean_field(mu, c);
}

VariationalParams initial_mixture(Index dim, Index components, Rng& rng) {
  std::uniform_real_distribution<double> mu_dist(-0.1, 0.1);
  std::uniform_real_distribution<double> c_dist(std::log(0.2), std::log(0.4));
  Matrix mu(components, dim), c(components, dim);
  for (Index k = 0; k < components; ++k)
    for (Index j = 0; j < dim; ++j) mu(k, j) = mu_dist(rng);
  for (Index k = 0; k < components; ++k)
    for (Index j = 0; j < dim; ++j) c(k, j) = c_dist(rng);
  return VariationalParams::mixture(Vector::Zero(components), mu, c);
}

}  // namespace abris
