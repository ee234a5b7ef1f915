#pragma once

#include "abris/types.hpp"

namespace abris {

enum class Family { MeanField, Mixture };

/// Variational parameters of a diagonal Gaussian or a mixture of diagonal
/// Gaussians, stored as one flat vector.
///
/// Flattening order is fixed: (logits | means of all components | log std of
/// all components). The mean-field family has no logit block, so its vector is
/// (mu | c) of length 2d; a K-component mixture has length K(2d+1).
/// `c` is the log standard deviation, so the covariance is diag(exp(2c)).
class VariationalParams {
 public:
  static VariationalParams mean_field(VectorRef mu, VectorRef log_std);
  static VariationalParams mean_field(Index dim);  // standard normal
  static VariationalParams mixture(VectorRef logits, MatrixRef mu, MatrixRef log_std);
  static VariationalParams from_flat(Family family, Index dim, Index components, VectorRef lambda);

  Family family() const { return family_; }
  Index dim() const { return dim_; }
  Index components() const { return components_; }
  Index size() const { return lambda_.size(); }

  const Vector& flat() const { return lambda_; }
  void set_flat(VectorRef lambda);

  bool same_layout(const VariationalParams& other) const {
    return family_ == other.family_ && dim_ == other.dim_ && components_ == other.components_;
  }

  // Offsets of the blocks in the flat vector.
  Index logit_offset() const { return 0; }
  Index logit_size() const { return family_ == Family::Mixture ? components_ : 0; }
  Index mean_offset(Index k = 0) const { return logit_size() + k * dim_; }
  Index log_std_offset(Index k = 0) const { return logit_size() + (components_ + k) * dim_; }

  auto mean(Index k = 0) const { return lambda_.segment(mean_offset(k), dim_); }
  auto log_std(Index k = 0) const { return lambda_.segment(log_std_offset(k), dim_); }
  auto logits() const { return lambda_.segment(0, logit_size()); }

  /// Softmax of the logits; {1} for the mean-field family.
  Vector weights() const;

 private:
  VariationalParams(Family family, Index dim, Index components, Vector lambda);

  Family family_;
  Index dim_;
  Index components_;
  Vector lambda_;
};

/// ln q(theta | lambda); log-sum-exp over components for mixtures.
double log_density(const VariationalParams& q, VectorRef theta);

/// ln q for every row of `thetas`.
Vector log_density_rows(const VariationalParams& q, MatrixRef thetas);

/// n i.i.d. draws, one per row. Mixtures pick a component first, then draw from it.
Matrix sample(const VariationalParams& q, Index n, Rng& rng);

/// Gradient of ln q(theta | lambda) with respect to the flat parameter vector.
Vector score(const VariationalParams& q, VectorRef theta);

/// Scores for every row of `thetas`, one score per row (rows x |lambda|).
Matrix score_rows(const VariationalParams& q, MatrixRef thetas);

/// Diagonal of the Fisher information of the mean-field family:
/// (exp(-2c), 2, ..., 2). Throws UnsupportedFamily for mixtures.
Vector fisher_information(const VariationalParams& q);

/// Uniform initialisation: means in [-0.1, 0.1], log std in [ln 0.2, ln 0.4].
VariationalParams initial_mean_field(Index dim, Rng& rng);

/// Mixture initialisation with zero logits and per-component draws as above.
VariationalParams initial_mixture(Index dim, Index components, Rng& rng);

}  // namespace abris
