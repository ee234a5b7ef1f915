#pragma once

#include "abris/forward_models.hpp"
#include "abris/variational.hpp"

namespace abris {

/// |estimate - truth| / |truth|.
template <typename DerivedA, typename DerivedB>
double relative_l2(const Eigen::MatrixBase<DerivedA>& estimate,
                   const Eigen::MatrixBase<DerivedB>& truth) {
  if (estimate.size() != truth.size()) throw InputError("relative_l2: length mismatch");
  const double denom = static_cast<double>(truth.norm());
  if (!(denom > 0.0)) throw InputError("relative_l2: truth has zero norm");
  return static_cast<double>((estimate - truth).norm()) / denom;
}

/// Relative error in the norm weighted by the positive diagonal `a`.
template <typename DerivedA, typename DerivedB, typename DerivedW>
double weighted_a_norm_error(const Eigen::MatrixBase<DerivedA>& estimate,
                             const Eigen::MatrixBase<DerivedB>& truth,
                             const Eigen::MatrixBase<DerivedW>& a) {
  if (estimate.size() != truth.size() || a.size() != truth.size()) {
    throw InputError("weighted_a_norm_error: length mismatch");
  }
  if (!(a.array() > 0).all()) throw InputError("weighted_a_norm_error: weights must be positive");
  const double num = static_cast<double>((a.array() * (estimate - truth).array().square()).sum());
  const double den = static_cast<double>((a.array() * truth.array().square()).sum());
  if (!(den > 0.0)) throw InputError("weighted_a_norm_error: truth has zero weighted norm");
  return std::sqrt(num / den);
}

struct MmcsOptions {
  Index grid_points = 512;
  double bandwidth_floor = 1e-6;  // relative to the pooled range; two grid steps at least
};

/// Cauchy-Schwarz divergence of two 1-D sample sets via Gaussian KDEs
/// (Silverman bandwidth) and trapezoid quadrature on a shared grid.
double cauchy_schwarz_1d(VectorRef p, VectorRef q, const MmcsOptions& opts = {});

/// Maximum over dimensions of the marginal Cauchy-Schwarz divergence. Each
/// argument holds one sample per row.
double mmcs(MatrixRef samples_p, MatrixRef samples_q, const MmcsOptions& opts = {});

struct FieldMoments {
  Vector mean;
  Vector stddev;
};

/// Moments of exp(basis * theta) over the given posterior draws (one per row).
FieldMoments posterior_field_moments(const FieldExpansion& expansion, MatrixRef draws);

/// Moments of the field under `draws` fresh samples of q.
FieldMoments posterior_field_moments(const FieldExpansion& expansion, const VariationalParams& q,
                                     Index draws, Rng& rng);

}  // namespace abris
