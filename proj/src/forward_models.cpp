#include "abris/forward_models.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <string>

namespace abris {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

// ---------------------------------------------------------------- Gaussian

GaussianTarget::GaussianTarget(Vector mean, Vector variance)
    : mean_(std::move(mean)), variance_(std::move(variance)) {
  if (mean_.size() != variance_.size() || mean_.size() == 0) {
    throw InputError("target mean and variance must have equal, non-zero length");
  }
  if (!(variance_.array() > 0.0).all()) throw InputError("target variances must be positive");
}

GaussianTarget GaussianTarget::isotropic(Index dim, double variance) {
  return GaussianTarget(Vector::Zero(dim), Vector::Constant(dim, variance));
}

double GaussianTarget::log_joint(VectorRef theta) const {
  if (theta.size() != dim()) throw InputError("theta has the wrong dimension");
  const double quad = ((theta - mean_).array().square() / variance_.array()).sum();
  return -0.5 * (quad + variance_.array().log().sum() + static_cast<double>(dim()) * kLog2Pi);
}

Vector GaussianTarget::optimal_lambda() const {
  Vector lambda(2 * dim());
  lambda << mean_, 0.5 * variance_.array().log().matrix();
  return lambda;
}

// -------------------------------------------------------------------- mesh

PoissonMesh::PoissonMesh(std::array<double, 3> lower, std::array<double, 3> upper,
                         std::array<Index, 3> elements)
    : lower_(lower), upper_(upper), elements_(elements) {
  for (int k = 0; k < 3; ++k) {
    if (elements_[k] < 1 || !(upper_[k] > lower_[k])) throw InputError("invalid mesh extents");
  }
  const auto [n1, n2, n3] = elements_;
  std::array<double, 3> h{};
  for (int k = 0; k < 3; ++k) h[k] = (upper_[k] - lower_[k]) / static_cast<double>(elements_[k]);

  nodes_.resize((n1 + 1) * (n2 + 1) * (n3 + 1), 3);
  dirichlet_.assign(static_cast<std::size_t>(nodes_.rows()), false);
  for (Index i1 = 0; i1 <= n1; ++i1)
    for (Index i3 = 0; i3 <= n3; ++i3)
      for (Index i2 = 0; i2 <= n2; ++i2) {
        const Index n = node_index(i1, i2, i3);
        nodes_.row(n) << lower_[0] + h[0] * static_cast<double>(i1),
            lower_[1] + h[1] * static_cast<double>(i2), lower_[2] + h[2] * static_cast<double>(i3);
        dirichlet_[static_cast<std::size_t>(n)] = i2 == 0 || i2 == n2 || i3 == 0 || i3 == n3;
      }

  centers_.resize(n1 * n2 * n3, 3);
  connectivity_.reserve(static_cast<std::size_t>(n1 * n2 * n3));
  for (Index e1 = 0; e1 < n1; ++e1)
    for (Index e3 = 0; e3 < n3; ++e3)
      for (Index e2 = 0; e2 < n2; ++e2) {
        std::array<Index, 8> conn{};
        // local node a = b1 + 2 b2 + 4 b3, b_k the offset along x_k
        for (int a = 0; a < 8; ++a) {
          conn[static_cast<std::size_t>(a)] = node_index(e1 + (a & 1), e2 + ((a >> 1) & 1), e3 + ((a >> 2) & 1));
        }
        centers_.row(static_cast<Index>(connectivity_.size()))
            << lower_[0] + h[0] * (static_cast<double>(e1) + 0.5),
            lower_[1] + h[1] * (static_cast<double>(e2) + 0.5),
            lower_[2] + h[2] * (static_cast<double>(e3) + 0.5);
        connectivity_.push_back(conn);
      }

  volume_ = h[0] * h[1] * h[2];
  const double g = 1.0 / std::sqrt(3.0);
  unit_stiffness_.setZero();
  for (int q = 0; q < 8; ++q) {
    const std::array<double, 3> xi{(q & 1) ? g : -g, (q & 2) ? g : -g, (q & 4) ? g : -g};
    Eigen::Matrix<double, 3, 8> grad;
    for (int a = 0; a < 8; ++a) {
      const std::array<double, 3> s{(a & 1) ? 1.0 : -1.0, (a & 2) ? 1.0 : -1.0, (a & 4) ? 1.0 : -1.0};
      std::array<double, 3> f{};
      for (int k = 0; k < 3; ++k) f[static_cast<std::size_t>(k)] = 0.5 * (1.0 + s[k] * xi[k]);
      grad(0, a) = 0.5 * s[0] * f[1] * f[2] * 2.0 / h[0];
      grad(1, a) = 0.5 * s[1] * f[0] * f[2] * 2.0 / h[1];
      grad(2, a) = 0.5 * s[2] * f[0] * f[1] * 2.0 / h[2];
    }
    unit_stiffness_ += grad.transpose() * grad * (volume_ / 8.0);
  }
}

PoissonMesh PoissonMesh::standard() { return refined(10); }

PoissonMesh PoissonMesh::refined(Index n) {
  return PoissonMesh({-0.05, -0.5, -0.5}, {0.05, 0.5, 0.5}, {1, n, n});
}

Index PoissonMesh::node_index(Index i1, Index i2, Index i3) const {
  return (i1 * (elements_[2] + 1) + i3) * (elements_[1] + 1) + i2;
}

// --------------------------------------------------------------------- FEM

Eigen::SparseMatrix<double> assemble_stiffness(const PoissonMesh& mesh, VectorRef zeta) {
  if (zeta.size() != mesh.element_count()) throw InputError("coefficient field has wrong length");
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(64 * mesh.element_count()));
  const auto& ke = mesh.unit_element_stiffness();
  for (Index e = 0; e < mesh.element_count(); ++e) {
    const auto& conn = mesh.connectivity()[static_cast<std::size_t>(e)];
    for (int a = 0; a < 8; ++a)
      for (int b = 0; b < 8; ++b) trip.emplace_back(conn[a], conn[b], zeta(e) * ke(a, b));
  }
  Eigen::SparseMatrix<double> k(mesh.node_count(), mesh.node_count());
  k.setFromTriplets(trip.begin(), trip.end());
  return k;
}

Vector poisson_solve_full(const PoissonMesh& mesh, VectorRef zeta, double source) {
  if (zeta.size() != mesh.element_count()) throw InputError("coefficient field has wrong length");
  if (!(zeta.array() > 0.0).all() || !zeta.allFinite()) {
    throw InputError("coefficient field must be finite and positive");
  }
  const auto& dir = mesh.dirichlet();
  std::vector<Index> free_id(static_cast<std::size_t>(mesh.node_count()), -1);
  Index n_free = 0;
  for (Index n = 0; n < mesh.node_count(); ++n)
    if (!dir[static_cast<std::size_t>(n)]) free_id[static_cast<std::size_t>(n)] = n_free++;

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(64 * mesh.element_count()));
  Vector rhs = Vector::Zero(n_free);
  const auto& ke = mesh.unit_element_stiffness();
  const double nodal_load = source * mesh.element_volume() / 8.0;
  for (Index e = 0; e < mesh.element_count(); ++e) {
    const auto& conn = mesh.connectivity()[static_cast<std::size_t>(e)];
    for (int a = 0; a < 8; ++a) {
      const Index ia = free_id[static_cast<std::size_t>(conn[a])];
      if (ia < 0) continue;
      rhs(ia) += nodal_load;
      for (int b = 0; b < 8; ++b) {
        const Index ib = free_id[static_cast<std::size_t>(conn[b])];
        if (ib >= 0) trip.emplace_back(ia, ib, zeta(e) * ke(a, b));
      }
    }
  }
  Eigen::SparseMatrix<double> k(n_free, n_free);
  k.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(k);
  if (llt.info() != Eigen::Success) throw NumericalError("stiffness matrix is not positive definite");
  const Vector u_free = llt.solve(rhs);
  if (llt.info() != Eigen::Success || !u_free.allFinite()) throw NumericalError("FEM solve failed");

  Vector u = Vector::Zero(mesh.node_count());
  for (Index n = 0; n < mesh.node_count(); ++n) {
    const Index id = free_id[static_cast<std::size_t>(n)];
    if (id >= 0) u(n) = u_free(id);
  }
  return u;
}

Vector poisson_solve(const PoissonMesh& mesh, VectorRef zeta, double source) {
  return poisson_solve_full(mesh, zeta, source).head(mesh.face_node_count());
}

Vector ground_truth_field(const PoissonMesh& mesh) {
  const Eigen::RowVector3d peak(0.0, 0.2, 0.2);
  const auto& c = mesh.element_centers();
  return 20.0 * (-4.0 * (c.rowwise() - peak).rowwise().squaredNorm().array()).exp();
}

// ------------------------------------------------------------------- field

Matrix se_kernel_gram(MatrixRef centers, double length_scale) {
  if (!(length_scale > 0.0)) throw InputError("length scale must be positive");
  const Index n = centers.rows();
  Matrix gram(n, n);
  for (Index a = 0; a < n; ++a)
    for (Index b = 0; b < n; ++b)
      gram(a, b) = std::exp(-(centers.row(a) - centers.row(b)).squaredNorm() /
                            (2.0 * length_scale * length_scale));
  return gram;
}

FieldExpansion se_kernel_basis(MatrixRef centers, double length_scale, Index terms,
                               bool scale_by_sqrt_eigenvalue) {
  if (terms < 1 || terms > centers.rows()) {
    throw InputError("number of expansion terms must be in [1, number of centres]");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(se_kernel_gram(centers, length_scale));
  if (eig.info() != Eigen::Success) throw NumericalError("eigen-decomposition of Gram matrix failed");
  // Eigen returns ascending order.
  FieldExpansion fe;
  fe.length_scale = length_scale;
  fe.scaled = scale_by_sqrt_eigenvalue;
  fe.eigenvalues = eig.eigenvalues().reverse().head(terms);
  fe.basis = eig.eigenvectors().rowwise().reverse().leftCols(terms);
  if (scale_by_sqrt_eigenvalue) {
    fe.basis = fe.basis * fe.eigenvalues.cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }
  return fe;
}

FieldEvaluation evaluate_field(const FieldExpansion& expansion, VectorRef theta) {
  if (theta.size() != expansion.terms()) throw InputError("theta length does not match expansion");
  Vector exponent = expansion.basis * theta;
  FieldEvaluation out;
  if ((exponent.array().abs() > 700.0).any()) {
    out.clamped = true;
    exponent = exponent.cwiseMax(-700.0).cwiseMin(700.0);
  }
  out.zeta = exponent.array().exp();
  return out;
}

Vector field_from_theta(const FieldExpansion& expansion, VectorRef theta) {
  return evaluate_field(expansion, theta).zeta;
}

Vector generate_observations(const PoissonMesh& mesh, Rng& rng) {
  const Vector u_true = poisson_solve(mesh, ground_truth_field(mesh));
  const double scale = 1e-3 * u_true.mean();
  std::normal_distribution<double> normal;
  Vector y = u_true;
  for (Index j = 0; j < y.size(); ++j) y(j) += scale * normal(rng);
  return y;
}

PoissonModel::PoissonModel(PoissonMesh mesh, FieldExpansion expansion, Vector y_obs)
    : mesh_(std::move(mesh)), expansion_(std::move(expansion)), y_obs_(std::move(y_obs)) {
  if (expansion_.basis.rows() != mesh_.element_count()) {
    throw InputError("expansion basis does not match the mesh");
  }
  if (y_obs_.size() != mesh_.face_node_count()) throw InputError("observation vector has wrong length");
  noise_variance_ = (1e-2 * y_obs_.array().abs() + 1e-2).square();
  log_norm_ = -0.5 * (noise_variance_.array().log().sum() + static_cast<double>(y_obs_.size()) * kLog2Pi);
}

Vector PoissonModel::forward(VectorRef theta) const {
  return poisson_solve(mesh_, field_from_theta(expansion_, theta));
}

double PoissonModel::log_likelihood(VectorRef theta) const {
  const Vector r = y_obs_ - forward(theta);
  return log_norm_ - 0.5 * (r.array().square() / noise_variance_.array()).sum();
}

double PoissonModel::log_prior(VectorRef theta) {
  return -0.5 * (theta.squaredNorm() + static_cast<double>(theta.size()) * kLog2Pi);
}

double PoissonModel::log_joint(VectorRef theta) const {
  if (theta.size() != dim()) throw InputError("theta has the wrong dimension");
  return log_likelihood(theta) + log_prior(theta);
}

// -------------------------------------------------------------- transforms

double tanh_transform(double theta, double lower, double upper) {
  if (!(upper > lower)) throw InputError("upper bound must exceed lower bound");
  return 0.5 * (1.0 + std::tanh(theta)) * (upper - lower) + lower;
}

double discrete_transform(double theta, double lower, double upper, int cardinality) {
  if (cardinality < 2) throw InputError("discrete cardinality must be >= 2");
  const double width = (upper - lower) / static_cast<double>(cardinality);
  const double offset = tanh_transform(theta, lower, upper) - lower;
  // tanh saturates to exactly 1 in double precision; keep the top bin closed.
  const double bin = std::min(std::floor(offset / width), static_cast<double>(cardinality - 1));
  return width * bin * static_cast<double>(cardinality) / static_cast<double>(cardinality - 1) + lower;
}

}  // namespace abris
