#include "abris/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace abris {

void MhConfig::validate() const {
  if (n_samples < 2) throw ConfigError("MH needs at least two samples");
  if (tune_interval < 1) throw ConfigError("MH tuning interval must be >= 1");
  if (!(accept_low > 0.0 && accept_low < accept_high && accept_high < 1.0)) {
    throw ConfigError("MH acceptance band must lie inside (0, 1)");
  }
  if (!(initial_scale > 0.0)) throw ConfigError("MH proposal scale must be positive");
  if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0)) {
    throw ConfigError("burn-in fraction must be in [0, 1)");
  }
}

double mh_acceptance(double log_target_current, double log_target_proposed) {
  const double delta = log_target_proposed - log_target_current;
  if (std::isnan(delta)) return 0.0;
  return delta >= 0.0 ? 1.0 : std::exp(delta);
}

MhResult mh_run(const ProbabilisticModel& model, const MhConfig& config, Rng& rng) {
  config.validate();
  const Index d = model.dim();
  MhResult result;
  result.chain.resize(config.n_samples, d);
  result.burn_in = static_cast<Index>(std::floor(config.burn_in_fraction * static_cast<double>(config.n_samples)));

  Vector current = config.initial_state.value_or(Vector::Zero(d));
  if (current.size() != d) throw ConfigError("MH initial state has the wrong dimension");
  double current_lp = model.log_joint(current);
  result.model_calls = 1;
  if (!std::isfinite(current_lp)) throw NumericalError("MH initial state has a non-finite log-joint");

  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;
  double scale = config.initial_scale;
  long window_accepted = 0;
  Index window_start = 0;

  for (Index step = 0; step < config.n_samples; ++step) {
    Vector proposal(d);
    for (Index j = 0; j < d; ++j) proposal(j) = current(j) + scale * normal(rng);
    double lp = -std::numeric_limits<double>::infinity();
    try {
      lp = model.log_joint(proposal);
    } catch (const std::exception&) {
      // treated as a rejected proposal
    }
    ++result.model_calls;
    if (uniform(rng) < mh_acceptance(current_lp, lp)) {
      current = std::move(proposal);
      current_lp = lp;
      ++window_accepted;
      ++result.accepted;
    }
    result.chain.row(step) = current.transpose();

    const Index len = step + 1 - window_start;
    if (len == config.tune_interval) {
      const double rate = static_cast<double>(window_accepted) / static_cast<double>(len);
      result.windows.push_back({step, result.model_calls, rate, scale});
      if (config.tune_after_burn_in || step < result.burn_in) {
        if (rate > config.accept_high) scale *= 1.5;
        else if (rate < config.accept_low) scale *= 0.67;
      }
      window_accepted = 0;
      window_start = step + 1;
    }
  }
  result.final_scale = scale;
  return result;
}

// -------------------------------------------------------------------- SMC

void SmcConfig::validate() const {
  if (n_particles < 2) throw ConfigError("SMC needs at least two particles");
  if (n_rejuvenation < 0) throw ConfigError("rejuvenation steps must be >= 0");
  if (!(resample_threshold > 0.0 && resample_threshold <= 1.0)) {
    throw ConfigError("resampling threshold must be in (0, 1]");
  }
  if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
}

Matrix ParticleCloud::covariance() const {
  const Vector mu = mean();
  const Matrix centred = particles.rowwise() - mu.transpose();
  return centred.transpose() * weights.asDiagonal() * centred;
}

SmcPrior SmcPrior::standard_normal(Index dim) {
  SmcPrior p;
  p.dim = dim;
  p.sample = [dim](Index n, Rng& rng) { return abris::standard_normal(n, dim, rng); };
  p.log_density = [](VectorRef theta) {
    return -0.5 * (theta.squaredNorm() + static_cast<double>(theta.size()) * 1.8378770664093454836);
  };
  return p;
}

std::vector<Index> residual_resample_indices(VectorRef weights, Rng& rng) {
  const Index n = weights.size();
  if (n == 0) throw InputError("cannot resample an empty cloud");
  if ((weights.array() < 0.0).any() || !weights.allFinite()) throw InputError("invalid weights");
  const double total = weights.sum();
  if (!(total > 0.0)) throw InputError("weights sum to zero");

  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(n));
  Vector residual(n);
  for (Index k = 0; k < n; ++k) {
    const double expected = static_cast<double>(n) * weights(k) / total;
    const auto copies = static_cast<Index>(std::floor(expected));
    for (Index c = 0; c < copies; ++c) out.push_back(k);
    residual(k) = expected - static_cast<double>(copies);
  }
  const auto remaining = n - static_cast<Index>(out.size());
  if (remaining > 0) {
    std::discrete_distribution<Index> pick(residual.data(), residual.data() + n);
    for (Index r = 0; r < remaining; ++r) out.push_back(pick(rng));
  }
  return out;
}

ParticleCloud residual_resample(const ParticleCloud& cloud, Rng& rng) {
  const auto idx = residual_resample_indices(cloud.weights, rng);
  ParticleCloud out;
  out.gamma = cloud.gamma;
  out.particles.resize(cloud.size(), cloud.particles.cols());
  out.log_likelihood.resize(cloud.size());
  for (Index k = 0; k < cloud.size(); ++k) {
    out.particles.row(k) = cloud.particles.row(idx[static_cast<std::size_t>(k)]);
    out.log_likelihood(k) = cloud.log_likelihood(idx[static_cast<std::size_t>(k)]);
  }
  out.weights = Vector::Constant(cloud.size(), 1.0 / static_cast<double>(cloud.size()));
  return out;
}

namespace {

Vector normalised_weights(VectorRef log_w) {
  const double mx = log_w.maxCoeff();
  Vector w = (log_w.array() - mx).exp();
  return w / w.sum();
}

double ess_of(VectorRef w) { return w.sum() * w.sum() / w.squaredNorm(); }

Vector evaluate_all(const ProbabilisticModel& model, MatrixRef thetas, int parallelism) {
  try {
    return batch_evaluate(model, thetas, parallelism);
  } catch (const BatchEvaluationError& e) {
    Vector v = e.partial;
    for (Index r : e.failed_rows) v(r) = -std::numeric_limits<double>::infinity();
    return v;
  }
}

}  // namespace

SmcResult smc_run(const ProbabilisticModel& likelihood, const SmcPrior& prior,
                  const SmcConfig& config, Rng& rng) {
  config.validate();
  const Index n = config.n_particles;
  const Index d = prior.dim;
  if (likelihood.dim() != d) throw InputError("likelihood and prior dimensions differ");
  const double target_ess = config.resample_threshold * static_cast<double>(n);

  SmcResult result;
  ParticleCloud& cloud = result.cloud;
  cloud.particles = prior.sample(n, rng);
  cloud.log_likelihood = evaluate_all(likelihood, cloud.particles, config.parallelism);
  result.model_calls += n;
  cloud.weights = Vector::Constant(n, 1.0 / static_cast<double>(n));
  cloud.gamma = 0.0;
  result.gamma_trace.push_back(0.0);
  if (!cloud.log_likelihood.allFinite()) {
    throw NumericalError("SMC: non-finite log-likelihood on initial prior draws");
  }

  std::uniform_real_distribution<double> uniform;
  Vector log_prior(n);
  for (Index k = 0; k < n; ++k) log_prior(k) = prior.log_density(cloud.particles.row(k).transpose());

  for (int stage = 1; cloud.gamma < 1.0; ++stage) {
    if (stage > config.max_stages) throw NumericalError("SMC: tempering did not reach gamma = 1");
    const Vector log_w_prev = cloud.weights.array().log();
    auto reweighted = [&](double g) {
      return normalised_weights(log_w_prev + (g - cloud.gamma) * cloud.log_likelihood);
    };

    // Next exponent: keep ESS(hi) < target, ESS(lo) >= target.
    double next = 1.0;
    if (ess_of(reweighted(1.0)) < target_ess) {
      double lo = cloud.gamma;
      double hi = 1.0;
      for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (ess_of(reweighted(mid)) < target_ess) hi = mid;
        else lo = mid;
      }
      next = hi;
      if (!(next > cloud.gamma)) {
        throw NumericalError("SMC: tempering bisection made no progress at gamma = " +
                             std::to_string(cloud.gamma));
      }
    }
    cloud.weights = reweighted(next);
    if (!cloud.weights.allFinite()) throw NumericalError("SMC: degenerate incremental weights");
    cloud.gamma = next;

    SmcStage info;
    info.stage = stage;
    info.gamma = next;
    info.ess = ess_of(cloud.weights);
    if (info.ess < target_ess) {
      cloud = residual_resample(cloud, rng);
      for (Index k = 0; k < n; ++k) log_prior(k) = prior.log_density(cloud.particles.row(k).transpose());
      info.resampled = true;
    }

    // Random-walk MH rejuvenation targeting prior * likelihood^gamma.
    long accepted = 0;
    if (config.n_rejuvenation > 0) {
      Matrix cov = cloud.covariance() * (2.38 * 2.38 / static_cast<double>(d));
      cov.diagonal().array() += 1e-12;
      Eigen::LLT<Matrix> chol(cov);
      Matrix factor = chol.info() == Eigen::Success
                          ? Matrix(chol.matrixL())
                          : Matrix(cov.diagonal().cwiseMax(1e-12).cwiseSqrt().asDiagonal());
      for (int move = 0; move < config.n_rejuvenation; ++move) {
        Matrix proposals = cloud.particles + standard_normal(n, d, rng) * factor.transpose();
        const Vector prop_ll = evaluate_all(likelihood, proposals, config.parallelism);
        result.model_calls += n;
        for (Index k = 0; k < n; ++k) {
          const double prop_lp = prior.log_density(proposals.row(k).transpose());
          const double current = log_prior(k) + cloud.gamma * cloud.log_likelihood(k);
          const double proposed = prop_lp + cloud.gamma * prop_ll(k);
          if (std::isfinite(prop_ll(k)) && uniform(rng) < mh_acceptance(current, proposed)) {
            cloud.particles.row(k) = proposals.row(k);
            cloud.log_likelihood(k) = prop_ll(k);
            log_prior(k) = prop_lp;
            ++accepted;
          }
        }
      }
      info.acceptance = static_cast<double>(accepted) /
                        static_cast<double>(n * static_cast<Index>(config.n_rejuvenation));
    }
    info.cumulative_calls = result.model_calls;
    result.stages.push_back(info);
    result.gamma_trace.push_back(cloud.gamma);
  }
  return result;
}

}  // namespace abris
