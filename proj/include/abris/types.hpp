#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace abris {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;
using Rng = std::mt19937_64;

using VectorRef = const Eigen::Ref<const Eigen::VectorXd>&;
using MatrixRef = const Eigen::Ref<const Eigen::MatrixXd>&;

// Error taxonomy. Each maps onto a class of failure the CLI reports with a
// distinct exit code.
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

struct UnsupportedFamily : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Raised when a model-call budget runs out in the middle of a sampling round.
struct BudgetExhausted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Spawn an independent child stream from a root seed and a stream name.
Rng child_stream(std::uint64_t root_seed, const std::string& name);

/// Draw an n x d matrix of standard normal variates.
Matrix standard_normal(Index n, Index d, Rng& rng);

}  // namespace abris
