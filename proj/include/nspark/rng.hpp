#pragma once

#include <cstdint>
#include <random>

namespace nspark {

/// Single seeded generator type used for every random draw.
using Rng = std::mt19937_64;

inline double normal(Rng& rng, double mean, double stddev) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace nspark
