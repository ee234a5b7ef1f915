#include "abris/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace abris {

namespace {

double silverman_bandwidth(VectorRef x, double floor) {
  const auto n = static_cast<double>(x.size());
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().sum() / std::max(n - 1.0, 1.0));
  std::vector<double> sorted(x.data(), x.data() + x.size());
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double p) {
    const double pos = p * (n - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  const double iqr = quantile(0.75) - quantile(0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  return std::max(0.9 * spread * std::pow(n, -0.2), floor);
}

Vector kde(VectorRef x, double h, VectorRef grid) {
  const double norm = 1.0 / (static_cast<double>(x.size()) * h * std::sqrt(2.0 * std::numbers::pi));
  Vector density = Vector::Zero(grid.size());
  for (Index g = 0; g < grid.size(); ++g) {
    density(g) = norm * (-0.5 * ((x.array() - grid(g)) / h).square()).exp().sum();
  }
  return density;
}

double trapezoid(VectorRef f, double dx) {
  return dx * (f.sum() - 0.5 * (f(0) + f(f.size() - 1)));
}

}  // namespace

double cauchy_schwarz_1d(VectorRef p, VectorRef q, const MmcsOptions& opts) {
  if (p.size() < 2 || q.size() < 2) throw InputError("MMCS needs at least two samples per set");
  if (opts.grid_points < 3) throw InputError("MMCS grid needs at least three points");
  const double lo = std::min(p.minCoeff(), q.minCoeff());
  const double hi = std::max(p.maxCoeff(), q.maxCoeff());
  const double range = hi - lo;
  const double span = range > 0.0 ? range : 1.0;
  const double floor = std::max(opts.bandwidth_floor * span,
                                2.0 * span / static_cast<double>(opts.grid_points - 1));
  const double hp = silverman_bandwidth(p, floor);
  const double hq = silverman_bandwidth(q, floor);
  const double pad = 3.0 * std::max(hp, hq);
  const Vector grid = Vector::LinSpaced(opts.grid_points, lo - pad, hi + pad);
  const double dx = grid(1) - grid(0);

  const Vector fp = kde(p, hp, grid);
  const Vector fq = kde(q, hq, grid);
  const double cross = trapezoid(fp.cwiseProduct(fq), dx);
  const double pp = trapezoid(fp.cwiseProduct(fp), dx);
  const double qq = trapezoid(fq.cwiseProduct(fq), dx);
  if (!(cross > 0.0)) return std::numeric_limits<double>::infinity();
  return std::max(-std::log(cross / std::sqrt(pp * qq)), 0.0);
}

double mmcs(MatrixRef samples_p, MatrixRef samples_q, const MmcsOptions& opts) {
  if (samples_p.cols() != samples_q.cols()) throw InputError("MMCS: dimension mismatch");
  if (samples_p.rows() < 100 || samples_q.rows() < 100) {
    throw InputError("MMCS needs at least 100 samples per set");
  }
  double worst = 0.0;
  for (Index j = 0; j < samples_p.cols(); ++j) {
    worst = std::max(worst, cauchy_schwarz_1d(samples_p.col(j), samples_q.col(j), opts));
  }
  return worst;
}

FieldMoments posterior_field_moments(const FieldExpansion& expansion, MatrixRef draws) {
  if (draws.cols() != expansion.terms()) throw InputError("draws do not match the expansion");
  if (draws.rows() < 1) throw InputError("no posterior draws");
  const Matrix log_field = draws * expansion.basis.transpose();  // draws x centres
  const Matrix field = log_field.array().min(700.0).exp();
  FieldMoments m;
  m.mean = field.colwise().mean().transpose();
  m.stddev = ((field.rowwise() - m.mean.transpose()).array().square().colwise().mean()).sqrt().transpose();
  return m;
}

FieldMoments posterior_field_moments(const FieldExpansion& expansion, const VariationalParams& q,
                                     Index draws, Rng& rng) {
  return posterior_field_moments(expansion, sample(q, draws, rng));
}

}  // namespace abris
