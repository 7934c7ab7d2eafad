#pragma once

// Seeded helpers for generating test and benchmark matrices. All randomness in
// the library flows through explicitly seeded std::mt19937_64 engines.

#include <cstdint>
#include <random>

#include "sfa/matrix.hpp"

namespace sfa {

using RandomEngine = std::mt19937_64;

inline Matrix randn(std::size_t rows, std::size_t cols, RandomEngine& eng,
                    double mean = 0.0, double stddev = 1.0) {
  std::normal_distribution<double> dist(mean, stddev);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = dist(eng);
  return m;
}

inline Matrix randn(std::size_t rows, std::size_t cols, std::uint64_t seed,
                    double mean = 0.0, double stddev = 1.0) {
  RandomEngine eng(seed);
  return randn(rows, cols, eng, mean, stddev);
}

inline Matrix rand_uniform(std::size_t rows, std::size_t cols, RandomEngine& eng,
                           double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = dist(eng);
  return m;
}

}  // namespace sfa
