#pragma once

#include <Eigen/Sparse>

#include <array>
#include <vector>

#include "abris/model.hpp"

namespace abris {

/// Analytic target N(mean, diag(variance)); the log-density plays the role of
/// the log-joint.
class GaussianTarget final : public ProbabilisticModel {
 public:
  GaussianTarget(Vector mean, Vector variance);
  /// Zero mean, isotropic variance.
  static GaussianTarget isotropic(Index dim, double variance);

  Index dim() const override { return mean_.size(); }
  double log_joint(VectorRef theta) const override;

  const Vector& mean() const { return mean_; }
  const Vector& variance() const { return variance_; }

  /// Mean-field parameters (mean | log std) that match the target exactly.
  Vector optimal_lambda() const;

 private:
  Vector mean_;
  Vector variance_;
};

/// Structured hexahedral mesh of an axis-aligned box with Dirichlet nodes on
/// the four faces |x2| = half-width or |x3| = half-width.
///
/// Nodes are numbered with x2 fastest, then x3, then x1, so the first
/// (n2+1)(n3+1) nodes form the face x1 = lower bound in output order.
/// Elements use the same ordering.
class PoissonMesh {
 public:
  PoissonMesh(std::array<double, 3> lower, std::array<double, 3> upper,
              std::array<Index, 3> elements);
  /// [-0.05,0.05] x [-0.5,0.5] x [-0.5,0.5] with 1 x 10 x 10 elements.
  static PoissonMesh standard();
  /// Same box with 1 x n x n elements.
  static PoissonMesh refined(Index n);

  Index node_count() const { return nodes_.rows(); }
  Index element_count() const { return centers_.rows(); }
  Index face_node_count() const { return (elements_[1] + 1) * (elements_[2] + 1); }

  const Matrix& nodes() const { return nodes_; }              // node_count x 3
  const Matrix& element_centers() const { return centers_; }  // element_count x 3
  const std::vector<bool>& dirichlet() const { return dirichlet_; }
  const std::vector<std::array<Index, 8>>& connectivity() const { return connectivity_; }

  /// Stiffness of one element for unit coefficient (8-point Gauss).
  const Eigen::Matrix<double, 8, 8>& unit_element_stiffness() const { return unit_stiffness_; }
  double element_volume() const { return volume_; }

  Index node_index(Index i1, Index i2, Index i3) const;

 private:
  std::array<double, 3> lower_;
  std::array<double, 3> upper_;
  std::array<Index, 3> elements_;
  Matrix nodes_;
  Matrix centers_;
  std::vector<bool> dirichlet_;
  std::vector<std::array<Index, 8>> connectivity_;
  Eigen::Matrix<double, 8, 8> unit_stiffness_;
  double volume_ = 0.0;
};

/// Global stiffness (all nodes, no boundary conditions) for an elementwise
/// constant coefficient.
Eigen::SparseMatrix<double> assemble_stiffness(const PoissonMesh& mesh, VectorRef zeta);

/// Solves div(-zeta grad u) = source with zero Dirichlet data and zero flux
/// elsewhere. Returns u at every node.
Vector poisson_solve_full(const PoissonMesh& mesh, VectorRef zeta, double source = 10.0);

/// Nodal solution on the face x1 = lower bound, x2 fastest.
Vector poisson_solve(const PoissonMesh& mesh, VectorRef zeta, double source = 10.0);

/// zeta_e = 20 exp(-4 |x_e - (0, 0.2, 0.2)|^2) at the element centres.
Vector ground_truth_field(const PoissonMesh& mesh);

/// Truncated expansion of a log-field in eigenvectors of the squared
/// exponential Gram matrix at the element centres.
struct FieldExpansion {
  Matrix basis;        // centres x terms
  Vector eigenvalues;  // descending
  double length_scale = 0.3;
  bool scaled = true;  // columns multiplied by sqrt(eigenvalue)

  Index terms() const { return basis.cols(); }
};

/// Gram K_ab = exp(-|x_a - x_b|^2 / (2 l^2)) and its top `terms` eigenpairs.
FieldExpansion se_kernel_basis(MatrixRef centers, double length_scale, Index terms,
                               bool scale_by_sqrt_eigenvalue = true);

Matrix se_kernel_gram(MatrixRef centers, double length_scale);

struct FieldEvaluation {
  Vector zeta;
  bool clamped = false;  // some exponent exceeded +-700
};

FieldEvaluation evaluate_field(const FieldExpansion& expansion, VectorRef theta);
/// exp(basis * theta).
Vector field_from_theta(const FieldExpansion& expansion, VectorRef theta);

/// y = u_true + 1e-3 * mean(u_true) * xi with xi standard normal per node.
Vector generate_observations(const PoissonMesh& mesh, Rng& rng);

/// Gaussian likelihood with C_jj = (1e-2 |y_j| + 1e-2)^2 around the face
/// solution, times a standard normal prior on theta.
class PoissonModel final : public ProbabilisticModel {
 public:
  PoissonModel(PoissonMesh mesh, FieldExpansion expansion, Vector y_obs);

  Index dim() const override { return expansion_.terms(); }
  double log_joint(VectorRef theta) const override;

  double log_likelihood(VectorRef theta) const;
  static double log_prior(VectorRef theta);
  Vector forward(VectorRef theta) const;

  const PoissonMesh& mesh() const { return mesh_; }
  const FieldExpansion& expansion() const { return expansion_; }
  const Vector& observations() const { return y_obs_; }
  const Vector& noise_variance() const { return noise_variance_; }

 private:
  PoissonMesh mesh_;
  FieldExpansion expansion_;
  Vector y_obs_;
  Vector noise_variance_;
  double log_norm_ = 0.0;
};

/// 0.5 (1 + tanh theta) (upper - lower) + lower.
double tanh_transform(double theta, double lower, double upper);

/// Maps theta onto one of `cardinality` evenly spaced levels from lower to
/// upper (both inclusive).
double discrete_transform(double theta, double lower, double upper, int cardinality);

}  // namespace abris
