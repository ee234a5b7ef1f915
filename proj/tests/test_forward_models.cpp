#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include <chrono>
#include <cmath>
#include <set>

#include "abris/forward_models.hpp"
#include "support.hpp"

using namespace abris;

TEST(GaussianTarget, LogJoint) {
  const auto t = GaussianTarget::isotropic(1, 0.1);
  EXPECT_NEAR(t.log_joint(Vector::Zero(1)), -0.5 * std::log(2.0 * M_PI * 0.1), 1e-15);
  EXPECT_NEAR(t.log_joint(Vector::Zero(1)), 0.23235401329234995, 1e-15);
  const auto t3 = GaussianTarget::isotropic(3, 0.1);
  Rng rng(1);
  std::normal_distribution<double> n;
  for (int rep = 0; rep < 20; ++rep) {
    Vector th(3);
    for (Index j = 0; j < 3; ++j) th(j) = n(rng);
    EXPECT_EQ(t3.log_joint(th), t3.log_joint(-th));
    double prev = t3.log_joint(th);
    for (double s = 1.5; s < 1e3; s *= 1.5) {
      const double v = t3.log_joint(s * th);
      EXPECT_LT(v, prev);
      prev = v;
    }
  }
  EXPECT_THROW(t3.log_joint(Vector::Zero(2)), InputError);
}

TEST(Mesh, CountsAndBoundary) {
  const auto mesh = PoissonMesh::standard();
  EXPECT_EQ(mesh.node_count(), 242);
  EXPECT_EQ(mesh.element_count(), 100);
  EXPECT_EQ(mesh.face_node_count(), 121);
  for (Index k = 0; k < 121; ++k) EXPECT_DOUBLE_EQ(mesh.nodes()(k, 0), -0.05);
  Index boundary = 0;
  for (Index k = 0; k < mesh.node_count(); ++k) {
    const bool side = std::abs(std::abs(mesh.nodes()(k, 1)) - 0.5) < 1e-12 ||
                      std::abs(std::abs(mesh.nodes()(k, 2)) - 0.5) < 1e-12;
    EXPECT_EQ(mesh.dirichlet()[std::size_t(k)], side) << k;
    boundary += side;
  }
  EXPECT_EQ(boundary, 2 * 40);
  EXPECT_NEAR(mesh.element_centers().col(1).mean(), 0.0, 1e-15);
  EXPECT_NEAR(mesh.element_volume(), 0.1 * 0.1 * 0.1, 1e-17);
  // x2 fastest on the output face
  EXPECT_NEAR(mesh.nodes()(1, 1) - mesh.nodes()(0, 1), 0.1, 1e-14);
  EXPECT_EQ(mesh.nodes()(1, 2), mesh.nodes()(0, 2));
}

TEST(KernelBasis, TwoCoincidentCenters) {
  const Matrix c = Matrix::Zero(2, 3);
  EXPECT_TRUE(se_kernel_gram(c, 0.3).isOnes(0.0));
  const auto fe = se_kernel_basis(c, 0.3, 2, false);
  EXPECT_NEAR(fe.eigenvalues(0), 2.0, 1e-14);
  EXPECT_NEAR(fe.eigenvalues(1), 0.0, 1e-14);
  EXPECT_THROW(se_kernel_basis(c, 0.3, 3), InputError);
}

TEST(KernelBasis, SpectralIdentities) {
  const auto mesh = PoissonMesh::standard();
  const Matrix gram = se_kernel_gram(mesh.element_centers(), 0.3);
  EXPECT_TRUE(gram.diagonal().isOnes(0.0));
  EXPECT_EQ(gram, gram.transpose());
  EXPECT_NEAR(gram(0, 1), std::exp(-0.01 / (2 * 0.09)), 1e-15);

  const auto full = se_kernel_basis(mesh.element_centers(), 0.3, 100, false);
  const Matrix rebuilt = full.basis * full.eigenvalues.asDiagonal() * full.basis.transpose();
  EXPECT_LT((rebuilt - gram).cwiseAbs().maxCoeff(), 1e-8);

  const auto top = se_kernel_basis(mesh.element_centers(), 0.3, 20, false);
  EXPECT_LT((top.basis.transpose() * top.basis - Matrix::Identity(20, 20)).cwiseAbs().maxCoeff(), 1e-8);
  for (Index j = 1; j < 20; ++j) EXPECT_GE(top.eigenvalues(j - 1), top.eigenvalues(j));

  const auto scaled = se_kernel_basis(mesh.element_centers(), 0.3, 20, true);
  for (Index j = 0; j < 20; ++j) {
    EXPECT_NEAR(scaled.basis.col(j).norm(), std::sqrt(top.eigenvalues(j)), 1e-8);
    EXPECT_NEAR(std::abs(scaled.basis.col(j).dot(top.basis.col(j))), std::sqrt(top.eigenvalues(j)), 1e-8);
  }
}

TEST(Field, Examples) {
  const auto mesh = PoissonMesh::standard();
  const auto fe = se_kernel_basis(mesh.element_centers(), 0.3, 20);
  EXPECT_TRUE(field_from_theta(fe, Vector::Zero(20)).isOnes(0.0));
  Rng rng(2);
  std::normal_distribution<double> n;
  Vector th(20);
  for (Index j = 0; j < 20; ++j) th(j) = n(rng);
  const Vector z = field_from_theta(fe, th);
  EXPECT_TRUE((z.array() > 0).all());
  EXPECT_TRUE(field_from_theta(fe, 2 * th).isApprox(z.cwiseAbs2(), 1e-12));
  EXPECT_LT((z.array().log().matrix() - fe.basis * th).cwiseAbs().maxCoeff(), 1e-12);

  const auto big = evaluate_field(fe, 1e4 * th);
  EXPECT_TRUE(big.clamped);
  EXPECT_TRUE(big.zeta.allFinite());
  EXPECT_FALSE(evaluate_field(fe, th).clamped);
  EXPECT_THROW(field_from_theta(fe, Vector::Zero(3)), InputError);
}

TEST(Field, LipschitzOnCompactSets) {
  const auto mesh = PoissonMesh::standard();
  const auto fe = se_kernel_basis(mesh.element_centers(), 0.3, 20);
  const double op_norm = Eigen::JacobiSVD<Matrix>(fe.basis).singularValues()(0);
  Rng rng(3);
  std::normal_distribution<double> n;
  for (int rep = 0; rep < 50; ++rep) {
    Vector th(20), v(20);
    for (Index j = 0; j < 20; ++j) {
      th(j) = n(rng);
      v(j) = n(rng);
    }
    v.normalize();
    const double h = 1e-4;
    const Vector a = field_from_theta(fe, th);
    const Vector b = field_from_theta(fe, th + h * v);
    const double bound = std::max(a.maxCoeff(), b.maxCoeff()) * op_norm * h;
    EXPECT_LE((b - a).norm(), bound * (1 + 1e-9));
  }
}

TEST(GroundTruth, Examples) {
  const auto mesh = PoissonMesh::standard();
  const Vector z = ground_truth_field(mesh);
  const Vector target = (Vector(3) << 0.0, 0.2, 0.2).finished();
  Index best = 0;
  z.maxCoeff(&best);
  double nearest = 1e9;
  for (Index e = 0; e < 100; ++e) {
    nearest = std::min(nearest, (mesh.element_centers().row(e).transpose() - target).norm());
  }
  EXPECT_NEAR((mesh.element_centers().row(best).transpose() - target).norm(), nearest, 1e-12);
  for (Index i2 = 0; i2 < 10; ++i2) {
    for (Index i3 = 0; i3 < 10; ++i3) EXPECT_NEAR(z(i2 + 10 * i3), z(i3 + 10 * i2), 1e-12);
  }
  const PoissonMesh one({-0.05, 0.1, 0.1}, {0.05, 0.3, 0.3}, {1, 1, 1});
  EXPECT_DOUBLE_EQ(ground_truth_field(one)(0), 20.0);
}

namespace {

// Dense assembly from the tensor-product form of the trilinear brick stiffness.
Vector dense_face_solution(const PoissonMesh& mesh, VectorRef zeta, Index n2, Index n3) {
  const double hx = 0.1, hy = 1.0 / double(n2), hz = 1.0 / double(n3);
  auto k1 = [](double h) -> Eigen::Matrix2d { return (Eigen::Matrix2d() << 1, -1, -1, 1).finished() / h; };
  auto m1 = [](double h) -> Eigen::Matrix2d { return (Eigen::Matrix2d() << 2, 1, 1, 2).finished() * h / 6.0; };
  Eigen::Matrix<double, 8, 8> ke;
  for (int a = 0; a < 8; ++a) {
    for (int b = 0; b < 8; ++b) {
      const int ax = a & 1, ay = (a >> 1) & 1, az = (a >> 2) & 1;
      const int bx = b & 1, by = (b >> 1) & 1, bz = (b >> 2) & 1;
      ke(a, b) = k1(hx)(ax, bx) * m1(hy)(ay, by) * m1(hz)(az, bz) +
                 m1(hx)(ax, bx) * k1(hy)(ay, by) * m1(hz)(az, bz) +
                 m1(hx)(ax, bx) * m1(hy)(ay, by) * k1(hz)(az, bz);
    }
  }
  const Index nn = 2 * (n2 + 1) * (n3 + 1);
  Matrix k = Matrix::Zero(nn, nn);
  Vector f = Vector::Zero(nn);
  auto node = [&](Index i1, Index i2, Index i3) { return i2 + (n2 + 1) * (i3 + (n3 + 1) * i1); };
  for (Index e3 = 0; e3 < n3; ++e3) {
    for (Index e2 = 0; e2 < n2; ++e2) {
      Index g[8];
      for (int a = 0; a < 8; ++a) g[a] = node(a & 1, e2 + ((a >> 1) & 1), e3 + ((a >> 2) & 1));
      for (int a = 0; a < 8; ++a) {
        f(g[a]) += 10.0 * hx * hy * hz / 8.0;
        for (int b = 0; b < 8; ++b) k(g[a], g[b]) += zeta(e2 + n2 * e3) * ke(a, b);
      }
    }
  }
  std::vector<Index> free;
  for (Index i1 = 0; i1 < 2; ++i1) {
    for (Index i3 = 0; i3 <= n3; ++i3) {
      for (Index i2 = 0; i2 <= n2; ++i2) {
        if (i2 != 0 && i2 != n2 && i3 != 0 && i3 != n3) free.push_back(node(i1, i2, i3));
      }
    }
  }
  const Index nf = Index(free.size());
  Matrix kf(nf, nf);
  Vector ff(nf);
  for (Index a = 0; a < nf; ++a) {
    ff(a) = f(free[std::size_t(a)]);
    for (Index b = 0; b < nf; ++b) kf(a, b) = k(free[std::size_t(a)], free[std::size_t(b)]);
  }
  const Vector uf = kf.ldlt().solve(ff);
  Vector u = Vector::Zero(nn);
  for (Index a = 0; a < nf; ++a) u(free[std::size_t(a)]) = uf(a);
  (void)mesh;
  return u.head((n2 + 1) * (n3 + 1));
}

}  // namespace

TEST(Poisson, UnitCoefficientMatchesFiniteDifferenceReference) {
  const auto mesh = PoissonMesh::standard();
  const Vector u = poisson_solve(mesh, Vector::Ones(100));
  const double reference = abris::test::fd_center_value(200, 10.0);
  EXPECT_NEAR(reference, 0.7367, 2e-4);  // known peak of -Laplace u = 10 on the unit square
  const double coarse = u(5 + 11 * 5);
  EXPECT_LT(std::abs(coarse - reference) / reference, 0.05);
  // the problem does not depend on x1
  const Vector full = poisson_solve_full(mesh, Vector::Ones(100));
  EXPECT_LT((full.head(121) - full.tail(121)).cwiseAbs().maxCoeff(), 1e-12);

  // refinement moves the centre value by less than the coarse error
  const auto fine = PoissonMesh::refined(20);
  const Vector uf = poisson_solve(fine, Vector::Ones(400));
  EXPECT_EQ(uf.size(), 441);
  const double refined = uf(10 + 21 * 10);
  EXPECT_LT(std::abs(refined - coarse), std::abs(coarse - reference));
  EXPECT_LT(std::abs(refined - reference), std::abs(coarse - reference));
}

TEST(Poisson, LinearInInverseCoefficient) {
  const auto mesh = PoissonMesh::standard();
  const Vector z = ground_truth_field(mesh);
  const Vector u = poisson_solve(mesh, z);
  for (double c : {0.5, 3.0, 1e3}) {
    EXPECT_TRUE(poisson_solve(mesh, c * z).isApprox(u / c, 1e-10)) << c;
  }
  EXPECT_THROW(poisson_solve(mesh, -z), InputError);
}

TEST(Poisson, PointSymmetry) {
  const auto mesh = PoissonMesh::standard();
  Rng rng(4);
  std::uniform_real_distribution<double> uni(0.5, 2.0);
  Vector z(100);
  for (Index i3 = 0; i3 < 10; ++i3) {
    for (Index i2 = 0; i2 < 10; ++i2) {
      const Index e = i2 + 10 * i3, mirror = (9 - i2) + 10 * (9 - i3);
      if (e < mirror) z(e) = z(mirror) = uni(rng);
    }
  }
  const Vector u = poisson_solve(mesh, z);
  for (Index j3 = 0; j3 <= 10; ++j3) {
    for (Index j2 = 0; j2 <= 10; ++j2) {
      EXPECT_NEAR(u(j2 + 11 * j3), u((10 - j2) + 11 * (10 - j3)), 1e-10);
    }
  }
}

TEST(Poisson, StiffnessSymmetricPositiveDefinite) {
  const auto mesh = PoissonMesh::standard();
  const Eigen::SparseMatrix<double> k = assemble_stiffness(mesh, ground_truth_field(mesh));
  const Matrix dense(k);
  EXPECT_LT((dense - dense.transpose()).cwiseAbs().maxCoeff() / dense.cwiseAbs().maxCoeff(), 1e-12);
  std::vector<Index> free;
  for (Index j = 0; j < mesh.node_count(); ++j) {
    if (!mesh.dirichlet()[std::size_t(j)]) free.push_back(j);
  }
  Matrix reduced(free.size(), free.size());
  for (std::size_t a = 0; a < free.size(); ++a) {
    for (std::size_t b = 0; b < free.size(); ++b) reduced(Index(a), Index(b)) = dense(free[a], free[b]);
  }
  EXPECT_EQ(Eigen::LLT<Matrix>(reduced).info(), Eigen::Success);
  // unit element stiffness rows sum to zero (constants are in the kernel)
  EXPECT_LT(mesh.unit_element_stiffness().rowwise().sum().cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Poisson, MatchesIndependentDenseAssembly) {
  const auto mesh = PoissonMesh::standard();
  const Vector z = ground_truth_field(mesh);
  EXPECT_LT((poisson_solve(mesh, z) - dense_face_solution(mesh, z, 10, 10)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Poisson, LogJointGoldenValue) {
  const auto mesh = PoissonMesh::standard();
  Rng noise = child_stream(1234, "noise");
  const Vector y = generate_observations(mesh, noise);
  const auto fe = se_kernel_basis(mesh.element_centers(), 0.3, 20);
  const PoissonModel model(mesh, fe, y);

  const Vector u = dense_face_solution(mesh, Vector::Ones(100), 10, 10);
  const Vector var = (1e-2 * y.cwiseAbs().array() + 1e-2).square();
  double oracle = 0.0;
  for (Index j = 0; j < 121; ++j) {
    oracle += -0.5 * std::log(2 * M_PI * var(j)) - 0.5 * (y(j) - u(j)) * (y(j) - u(j)) / var(j);
  }
  oracle += -0.5 * 20 * std::log(2 * M_PI);
  EXPECT_NEAR(model.log_joint(Vector::Zero(20)), oracle, 1e-9 * std::abs(oracle));
  EXPECT_NEAR(model.log_joint(Vector::Zero(20)), -54544.806613980138, 1e-7);
}

TEST(Poisson, LikelihoodShape) {
  const auto mesh = PoissonMesh::standard();
  const auto fe = se_kernel_basis(mesh.element_centers(), 0.3, 20);
  Rng rng(5);
  std::normal_distribution<double> n;
  Vector th(20);
  for (Index j = 0; j < 20; ++j) th(j) = 0.5 * n(rng);
  const PoissonModel helper(mesh, fe, Vector::Ones(121));
  const Vector clean = helper.forward(th);
  const PoissonModel exact(mesh, fe, clean);
  EXPECT_NEAR(exact.log_likelihood(th), -0.5 * (2 * M_PI * exact.noise_variance().array()).log().sum(), 1e-9);
  EXPECT_NEAR(exact.log_joint(th) - exact.log_likelihood(th), PoissonModel::log_prior(th), 1e-12);

  double prev = exact.log_likelihood(th);
  for (double shift : {1e-3, 1e-2, 1e-1}) {
    Vector y = clean;
    y(60) += shift;
    // residual grows with the noise variance held at the clean values
    const Vector r = helper.forward(th) - y;
    const double v = -0.5 * (r.array().square() / exact.noise_variance().array()).sum() -
                     0.5 * (2 * M_PI * exact.noise_variance().array()).log().sum();
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(Poisson, ObservationNoise) {
  const auto mesh = PoissonMesh::standard();
  const Vector u = poisson_solve(mesh, ground_truth_field(mesh));
  const double scale = 1e-3 * u.mean();
  Rng a(6), b(6);
  const Vector y = generate_observations(mesh, a);
  EXPECT_EQ(y, generate_observations(mesh, b));
  EXPECT_LE((y - u).cwiseAbs().maxCoeff(), 5 * scale);

  Rng rng(7);
  Vector sum = Vector::Zero(121);
  const int reps = 1000;
  for (int r = 0; r < reps; ++r) sum += generate_observations(mesh, rng);
  const Vector mean = sum / reps;
  EXPECT_LE((mean - u).cwiseAbs().maxCoeff(), 5 * scale / std::sqrt(double(reps)));
}

TEST(Poisson, SolveIsFast) {
  const auto mesh = PoissonMesh::standard();
  const Vector z = ground_truth_field(mesh);
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < 50; ++r) poisson_solve(mesh, z);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / 50;
  EXPECT_LT(ms, 10.0);
}

TEST(Transforms, Tanh) {
  EXPECT_DOUBLE_EQ(tanh_transform(0.0, 2.0, 6.0), 4.0);
  EXPECT_NEAR(tanh_transform(20.0, 2.0, 6.0), 6.0, 1e-12);
  EXPECT_NEAR(tanh_transform(1.0, 0.0, 1.0), 0.5 * (1 + std::tanh(1.0)), 1e-15);
  EXPECT_NEAR(tanh_transform(1.0, 0.0, 1.0), 0.8808, 5e-5);
  double prev = tanh_transform(-15.0, -1.0, 1.0);
  for (double t = -15.0 + 0.01; t < 15.0; t += 0.01) {
    const double v = tanh_transform(t, -1.0, 1.0);
    EXPECT_GT(v, -1.0);
    EXPECT_GE(v, prev);
    EXPECT_LE(v, 1.0);
    prev = v;
  }
  for (double t = -5.0; t < 5.0; t += 0.1) EXPECT_LT(tanh_transform(t, 0, 1), tanh_transform(t + 0.1, 0, 1));
}

TEST(Transforms, Discrete) {
  auto image = [](double lo, double hi, int card) {
    std::set<double> levels;
    for (double t = -30.0; t <= 30.0; t += 1e-3) levels.insert(discrete_transform(t, lo, hi, card));
    return levels;
  };
  const auto sep = image(370, 430, 4);
  EXPECT_EQ(sep, (std::set<double>{370.0, 390.0, 410.0, 430.0}));
  for (int card : {2, 3, 5, 8}) EXPECT_EQ(image(0.0, 1.0, card).size(), std::size_t(card)) << card;
  EXPECT_EQ(discrete_transform(-1e3, 370, 430, 4), 370.0);
  EXPECT_EQ(discrete_transform(1e3, 370, 430, 4), 430.0);
  EXPECT_THROW(discrete_transform(0.0, 0.0, 1.0, 1), InputError);
}
