#pragma once

#include <Eigen/SparseCholesky>

#include <cmath>
#include <vector>

#include "abris/estimators.hpp"
#include "abris/forward_models.hpp"
#include "abris/model.hpp"

namespace abris::test {

/// Closed-form ELBO gradient of a mean-field q against a diagonal Gaussian
/// target: d/dmu = -(mu - m)/v, d/dc = 1 - sigma^2/v.
inline Vector gaussian_elbo_gradient(const VariationalParams& q, const GaussianTarget& t) {
  const Vector mu = q.mean();
  const Vector var = (2.0 * q.log_std().array()).exp();
  Vector g(q.size());
  g.head(q.dim()) = -((mu - t.mean()).array() / t.variance().array()).matrix();
  g.tail(q.dim()) = (1.0 - var.array() / t.variance().array()).matrix();
  return g;
}

inline Batch draw_batch(const VariationalParams& q, const ProbabilisticModel& model, Index n, Rng& rng,
                        long iteration = 0) {
  Batch b{sample(q, n, rng), Vector(), q, iteration};
  b.log_joint = batch_evaluate(model, b.theta);
  return b;
}

/// Mean and standard error of each column.
struct ColumnStats {
  Vector mean;
  Vector stderr_;
};

inline ColumnStats column_stats(const Matrix& rows) {
  ColumnStats s;
  const double n = static_cast<double>(rows.rows());
  s.mean = rows.colwise().mean().transpose();
  const Vector var = ((rows.rowwise() - s.mean.transpose()).array().square().colwise().sum() / (n - 1.0)).transpose();
  s.stderr_ = (var.array() / n).sqrt();
  return s;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// -Laplace u = f on [-0.5, 0.5]^2, zero boundary, 5-point stencil; value at the centre.
inline double fd_center_value(int n, double f) {
  const int m = n - 1;
  const double h = 1.0 / n;
  std::vector<Eigen::Triplet<double>> t;
  auto id = [m](int i, int j) { return i + m * j; };
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < m; ++i) {
      t.emplace_back(id(i, j), id(i, j), 4.0 / (h * h));
      if (i > 0) t.emplace_back(id(i, j), id(i - 1, j), -1.0 / (h * h));
      if (i < m - 1) t.emplace_back(id(i, j), id(i + 1, j), -1.0 / (h * h));
      if (j > 0) t.emplace_back(id(i, j), id(i, j - 1), -1.0 / (h * h));
      if (j < m - 1) t.emplace_back(id(i, j), id(i, j + 1), -1.0 / (h * h));
    }
  }
  Eigen::SparseMatrix<double> a(m * m, m * m);
  a.setFromTriplets(t.begin(), t.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(a);
  const Vector u = solver.solve(Vector::Constant(m * m, f));
  return u(id(m / 2, m / 2));
}

}  // namespace abris::test
