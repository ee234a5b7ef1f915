#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "abris/model.hpp"

namespace abris {

// ------------------------------------------------------------------- MCMC

struct MhConfig {
  Index n_samples = 10000;  // total chain length, burn-in included
  Index tune_interval = 100;
  double accept_low = 0.2;
  double accept_high = 0.5;
  double initial_scale = 0.1;
  double burn_in_fraction = 0.5;
  bool tune_after_burn_in = false;  // keep the post burn-in chain a fixed kernel
  std::optional<Vector> initial_state;
  int parallelism = 1;

  void validate() const;
};

struct MhWindow {
  Index step = 0;  // last step of the window
  long cumulative_calls = 0;
  double acceptance = 0.0;
  double scale = 0.0;  // scale used during the window
};

struct MhResult {
  Matrix chain;  // n_samples x d, burn-in included
  Index burn_in = 0;
  std::vector<MhWindow> windows;
  double final_scale = 0.0;
  long model_calls = 0;
  long accepted = 0;

  Matrix posterior_samples() const { return chain.bottomRows(chain.rows() - burn_in); }
};

/// Random-walk Metropolis-Hastings with an isotropic Gaussian proposal. The
/// scale is multiplied by 1.5 (window acceptance > high) or 0.67 (< low) every
/// `tune_interval` steps. One model call per proposal plus one for the start.
MhResult mh_run(const ProbabilisticModel& model, const MhConfig& config, Rng& rng);

/// MH acceptance probability min(1, exp(delta)) for a symmetric proposal.
double mh_acceptance(double log_target_current, double log_target_proposed);

// -------------------------------------------------------------------- SMC

struct SmcConfig {
  Index n_particles = 100;
  int n_rejuvenation = 10;
  double resample_threshold = 0.5;  // fraction of n_particles
  int parallelism = 1;
  int max_stages = 10000;

  void validate() const;
};

struct ParticleCloud {
  Matrix particles;        // n x d
  Vector weights;          // normalised
  Vector log_likelihood;   // cached per particle
  double gamma = 0.0;      // tempering exponent

  Index size() const { return particles.rows(); }
  Vector mean() const { return particles.transpose() * weights; }
  Matrix covariance() const;
};

/// Prior for tempered SMC: sampler plus log-density.
struct SmcPrior {
  Index dim = 0;
  std::function<Matrix(Index, Rng&)> sample;
  std::function<double(VectorRef)> log_density;

  static SmcPrior standard_normal(Index dim);
};

struct SmcStage {
  int stage = 0;
  double gamma = 0.0;
  double ess = 0.0;
  bool resampled = false;
  double acceptance = 0.0;
  long cumulative_calls = 0;
};

struct SmcResult {
  ParticleCloud cloud;
  std::vector<double> gamma_trace;  // starts at 0, ends at 1
  std::vector<SmcStage> stages;
  long model_calls = 0;
};

/// Adaptive-tempering SMC: targets prior * likelihood^gamma; the next gamma is
/// found by bisection so that the ESS of the reweighted cloud hits
/// threshold * n. Residual resampling below the threshold, then
/// `n_rejuvenation` random-walk MH moves with covariance 2.38^2/d times the
/// particle covariance. `likelihood` returns the log-likelihood.
SmcResult smc_run(const ProbabilisticModel& likelihood, const SmcPrior& prior,
                  const SmcConfig& config, Rng& rng);

/// Offspring indices: floor(n w_k) deterministic copies, remainder drawn
/// multinomially from the residual weights.
std::vector<Index> residual_resample_indices(VectorRef weights, Rng& rng);

/// Resamples the cloud; the returned weights are uniform.
ParticleCloud residual_resample(const ParticleCloud& cloud, Rng& rng);

}  // namespace abris
