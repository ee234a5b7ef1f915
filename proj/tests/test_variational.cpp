#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "abris/variational.hpp"
#include "support.hpp"

using namespace abris;
using abris::test::column_stats;

namespace {

VariationalParams mf(std::initializer_list<double> mu, std::initializer_list<double> c) {
  Vector m(static_cast<Index>(mu.size())), s(static_cast<Index>(c.size()));
  std::copy(mu.begin(), mu.end(), m.data());
  std::copy(c.begin(), c.end(), s.data());
  return VariationalParams::mean_field(m, s);
}

VariationalParams two_component(double logit0, double m0, double m1, double c0, double c1) {
  Vector logits(2);
  logits << logit0, 0.0;
  Matrix mu(2, 1), ls(2, 1);
  mu << m0, m1;
  ls << c0, c1;
  return VariationalParams::mixture(logits, mu, ls);
}

VariationalParams random_params(Family family, Index d, Index k, Rng& rng) {
  std::normal_distribution<double> n01;
  const Index size = family == Family::MeanField ? 2 * d : k * (2 * d + 1);
  Vector lambda(size);
  for (Index j = 0; j < size; ++j) lambda(j) = 0.5 * n01(rng);
  return VariationalParams::from_flat(family, d, k, lambda);
}

// Trapezoid integral of exp(log_density) over a square grid.
double integrate_2d(const VariationalParams& q, double lo, double hi, int n) {
  const double h = (hi - lo) / n;
  double total = 0.0;
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j <= n; ++j) {
      Vector t(2);
      t << lo + i * h, lo + j * h;
      const double w = (i == 0 || i == n ? 0.5 : 1.0) * (j == 0 || j == n ? 0.5 : 1.0);
      total += w * std::exp(log_density(q, t));
    }
  }
  return total * h * h;
}

double integrate_1d(const VariationalParams& q, double lo, double hi, int n) {
  const double h = (hi - lo) / n;
  double total = 0.0;
  for (int i = 0; i <= n; ++i) {
    Vector t(1);
    t << lo + i * h;
    total += (i == 0 || i == n ? 0.5 : 1.0) * std::exp(log_density(q, t));
  }
  return total * h;
}

}  // namespace

TEST(Variational, StandardNormalLogDensityAtMode) {
  EXPECT_NEAR(log_density(mf({0.0}, {0.0}), Vector::Zero(1)), -0.91893853320467274, 1e-14);
}

TEST(Variational, MixtureOfIdenticalComponentsMatchesSingle) {
  const auto single = mf({0.3}, {-0.2});
  const auto mix = two_component(0.0, 0.3, 0.3, -0.2, -0.2);
  for (double t : {-2.0, 0.0, 0.7, 5.0}) {
    Vector th(1);
    th << t;
    EXPECT_NEAR(log_density(mix, th), log_density(single, th), 1e-12);
  }
}

TEST(Variational, LogDensityMatchesQuadratureNormalisedOracle) {
  const auto q = mf({1.0, -1.0}, {std::log(2.0), 0.0});
  // Unnormalised kernel exp(-0.5 sum ((t - mu)/sigma)^2) normalised by a fine grid.
  const double s0 = 2.0, s1 = 1.0;
  const int n = 800;
  const double lo0 = 1.0 - 12.0 * s0, hi0 = 1.0 + 12.0 * s0, lo1 = -1.0 - 12.0, hi1 = -1.0 + 12.0;
  const double h0 = (hi0 - lo0) / n, h1 = (hi1 - lo1) / n;
  double z = 0.0;
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j <= n; ++j) {
      const double a = (lo0 + i * h0 - 1.0) / s0, b = (lo1 + j * h1 + 1.0) / s1;
      z += (i == 0 || i == n ? 0.5 : 1.0) * (j == 0 || j == n ? 0.5 : 1.0) * std::exp(-0.5 * (a * a + b * b));
    }
  }
  z *= h0 * h1;
  const double oracle = -0.5 * (0.25 + 1.0) - std::log(z);
  EXPECT_NEAR(log_density(q, Vector::Zero(2)), oracle, 1e-8);
  EXPECT_NEAR(log_density(q, Vector::Zero(2)), -3.1560242469692907, 1e-12);
}

TEST(Variational, DensityIntegratesToOne) {
  EXPECT_NEAR(integrate_1d(mf({0.4}, {-0.3}), -10.0, 10.0, 4000), 1.0, 1e-6);
  EXPECT_NEAR(integrate_1d(two_component(0.7, -1.0, 2.0, -0.5, 0.2), -12.0, 14.0, 6000), 1.0, 1e-6);
  EXPECT_NEAR(integrate_2d(mf({0.5, -0.5}, {-0.4, 0.1}), -8.0, 8.0, 700), 1.0, 1e-6);
  Vector logits(2);
  logits << 0.3, -0.2;
  Matrix mu(2, 2), ls(2, 2);
  mu << -1.0, 0.5, 1.0, -0.5;
  ls << -0.5, -0.3, -0.2, -0.6;
  EXPECT_NEAR(integrate_2d(VariationalParams::mixture(logits, mu, ls), -8.0, 8.0, 700), 1.0, 1e-6);
}

TEST(Variational, LayoutLengthsAndRoundTrip) {
  Rng rng(3);
  const auto a = random_params(Family::MeanField, 4, 1, rng);
  EXPECT_EQ(a.size(), 8);
  const auto b = random_params(Family::Mixture, 3, 4, rng);
  EXPECT_EQ(b.size(), 4 * 7);
  const auto c = VariationalParams::from_flat(b.family(), b.dim(), b.components(), b.flat());
  EXPECT_EQ(c.flat(), b.flat());
  EXPECT_TRUE(c.same_layout(b));
  EXPECT_NEAR(b.weights().sum(), 1.0, 1e-12);
  EXPECT_TRUE((b.weights().array() > 0.0).all());
  EXPECT_THROW(VariationalParams::from_flat(Family::MeanField, 3, 1, Vector::Zero(5)), InputError);
}

TEST(Variational, InputValidation) {
  const auto q = mf({0.0, 0.0}, {0.0, 0.0});
  EXPECT_THROW(log_density(q, Vector::Zero(3)), InputError);
  EXPECT_THROW(score(q, Vector::Zero(1)), InputError);
  Vector bad(2);
  bad << std::nan(""), 0.0;
  EXPECT_THROW(log_density(VariationalParams::mean_field(bad, Vector::Zero(2)), Vector::Zero(2)), InputError);
  Rng rng(1);
  EXPECT_THROW(sample(q, 0, rng), InputError);
}

TEST(Variational, DegenerateVarianceSamplesSitOnMean) {
  const auto q = mf({1.5, -2.0}, {std::log(1e-8), std::log(1e-8)});
  Rng rng(11);
  const Matrix s = sample(q, 1000, rng);
  EXPECT_LT((s.rowwise() - q.mean().transpose()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Variational, SampleMomentsStandardNormal) {
  Rng rng(12);
  const Matrix s = sample(mf({0.0}, {0.0}), 100000, rng);
  const double mean = s.mean();
  const double var = (s.array() - mean).square().sum() / (s.rows() - 1.0);
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.03);
}

TEST(Variational, MixtureComponentFrequency) {
  // softmax(ln 3, 0) = (0.75, 0.25); components far apart so the draw reveals its component.
  const auto q = two_component(std::log(3.0), -20.0, 20.0, 0.0, 0.0);
  Rng rng(13);
  const Matrix s = sample(q, 100000, rng);
  const double freq = static_cast<double>((s.array() < 0.0).count()) / 100000.0;
  EXPECT_NEAR(freq, 0.75, 0.01);
}

TEST(Variational, EmpiricalCdfMatchesDensity) {
  const auto q = mf({0.3}, {-0.4});
  Rng rng(14);
  Matrix s = sample(q, 100000, rng);
  std::vector<double> xs(s.data(), s.data() + s.size());
  std::sort(xs.begin(), xs.end());
  const double sigma = std::exp(-0.4);
  double gap = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = abris::test::normal_cdf((xs[i] - 0.3) / sigma);
    gap = std::max({gap, std::abs(f - double(i) / xs.size()), std::abs(f - double(i + 1) / xs.size())});
  }
  EXPECT_LE(gap, 0.01);

  // mixture: compare against the weighted component CDFs
  const auto m = two_component(0.5, -1.0, 1.5, -0.3, 0.1);
  s = sample(m, 100000, rng);
  xs.assign(s.data(), s.data() + s.size());
  std::sort(xs.begin(), xs.end());
  const Vector w = m.weights();
  gap = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = w(0) * abris::test::normal_cdf((xs[i] + 1.0) / std::exp(-0.3)) +
                     w(1) * abris::test::normal_cdf((xs[i] - 1.5) / std::exp(0.1));
    gap = std::max({gap, std::abs(f - double(i) / xs.size()), std::abs(f - double(i + 1) / xs.size())});
  }
  EXPECT_LE(gap, 0.01);
}

TEST(Variational, ScoreAtMean) {
  const auto q = mf({0.5, -1.0, 2.0}, {0.1, -0.3, 0.7});
  const Vector s = score(q, q.mean());
  EXPECT_TRUE(s.head(3).isZero(0.0));
  EXPECT_TRUE(s.tail(3).isApprox(Vector::Constant(3, -1.0), 1e-15));
}

TEST(Variational, ScoreMatchesFiniteDifferences) {
  Rng rng(21);
  std::normal_distribution<double> n01;
  for (Family family : {Family::MeanField, Family::Mixture}) {
    for (int rep = 0; rep < 100; ++rep) {
      const Index d = family == Family::MeanField ? 3 : 2;
      const Index k = family == Family::MeanField ? 1 : 3;
      auto q = random_params(family, d, k, rng);
      Vector theta(d);
      for (Index j = 0; j < d; ++j) theta(j) = n01(rng);
      const Vector s = score(q, theta);
      Vector fd(q.size());
      for (Index j = 0; j < q.size(); ++j) {
        Vector up = q.flat(), dn = q.flat();
        up(j) += 1e-5;
        dn(j) -= 1e-5;
        const auto qu = VariationalParams::from_flat(family, d, k, up);
        const auto qd = VariationalParams::from_flat(family, d, k, dn);
        fd(j) = (log_density(qu, theta) - log_density(qd, theta)) / 2e-5;
      }
      EXPECT_LE((s - fd).norm(), 1e-4 * std::max(1.0, fd.norm())) << "family " << int(family) << " rep " << rep;
      // vectorised version agrees
      EXPECT_TRUE(score_rows(q, theta.transpose()).row(0).transpose().isApprox(s, 1e-12));
    }
  }
}

TEST(Variational, ScoreHasZeroMean) {
  Rng rng(22);
  const auto q1 = mf({0.2, -0.4}, {-0.1, 0.3});
  const auto q2 = two_component(0.4, -1.0, 1.0, -0.2, 0.1);
  for (const auto* q : {&q1, &q2}) {
    const auto stats = column_stats(score_rows(*q, sample(*q, 100000, rng)));
    const double se = stats.stderr_.norm();
    EXPECT_LE(stats.mean.norm(), 5.0 * se);
  }
}

TEST(Variational, FisherInformationClosedForm) {
  EXPECT_TRUE(fisher_information(mf({0.0, 0.0}, {0.0, 0.0})).isApprox((Vector(4) << 1, 1, 2, 2).finished(), 1e-15));
  EXPECT_TRUE(fisher_information(mf({0.0}, {std::log(2.0)})).isApprox((Vector(2) << 0.25, 2).finished(), 1e-15));
  EXPECT_THROW(fisher_information(two_component(0, 0, 0, 0, 0)), UnsupportedFamily);
}

TEST(Variational, FisherInformationMatchesScoreOuterProduct) {
  const auto q = mf({0.3, -0.2}, {0.2, -0.5});
  Rng rng(23);
  const Matrix s = score_rows(q, sample(q, 200000, rng));
  const Vector f = fisher_information(q);
  for (Index a = 0; a < q.size(); ++a) {
    for (Index b = 0; b < q.size(); ++b) {
      const Matrix prod = (s.col(a).array() * s.col(b).array()).matrix();
      const auto stats = column_stats(prod);
      const double expected = a == b ? f(a) : 0.0;
      EXPECT_LE(std::abs(stats.mean(0) - expected), 5.0 * stats.stderr_(0)) << a << "," << b;
    }
  }
}

TEST(Variational, SingleComponentMixtureReproducesMeanField) {
  Rng rng(24);
  const auto q = mf({0.3, -0.6, 1.1}, {0.2, -0.1, -0.7});
  const auto m = VariationalParams::mixture(Vector::Zero(1), q.mean().transpose(), q.log_std().transpose());
  std::normal_distribution<double> n01;
  for (int rep = 0; rep < 20; ++rep) {
    Vector t(3);
    for (Index j = 0; j < 3; ++j) t(j) = n01(rng);
    EXPECT_NEAR(log_density(m, t), log_density(q, t), 1e-12);
    const Vector sm = score(m, t);
    EXPECT_NEAR(sm(0), 0.0, 1e-12);
    EXPECT_LE((sm.tail(6) - score(q, t)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Variational, InitialisationRanges) {
  Rng rng(25);
  for (int rep = 0; rep < 50; ++rep) {
    const auto q = initial_mean_field(5, rng);
    EXPECT_TRUE((q.mean().array().abs() <= 0.1).all());
    EXPECT_TRUE((q.log_std().array() >= std::log(0.2)).all());
    EXPECT_TRUE((q.log_std().array() <= std::log(0.4)).all());
  }
  const auto m = initial_mixture(2, 3, rng);
  EXPECT_EQ(m.size(), 15);
  EXPECT_TRUE(m.logits().isZero());
}
