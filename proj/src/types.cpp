#include "abris/types.hpp"

#include <functional>

namespace abris {

Rng child_stream(std::uint64_t root_seed, const std::string& name) {
  const std::uint64_t tag = std::hash<std::string>{}(name);
  std::seed_seq seq{static_cast<std::uint32_t>(root_seed), static_cast<std::uint32_t>(root_seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return Rng(seq);
}

Matrix standard_normal(Index n, Index d, Rng& rng) {
  std::normal_distribution<double> normal;
  Matrix out(n, d);
  for (Index s = 0; s < n; ++s)
    for (Index j = 0; j < d; ++j) out(s, j) = normal(rng);
  return out;
}

}  // namespace abris
